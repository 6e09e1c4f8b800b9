"""Closed-form reference solutions and named presets.

Each application has an explicitly solvable benchmark used as a
regression oracle for the generic solver:

* income_fertility_large (wives on [0,1] x [1/2,1], husbands on [1/2,1]):
  the iso-husband hyperbola coefficient k2(y) = 2(v'(y) - 1) is
  (y - 1/2) / ln(y / (y - 1/2)) up to the break e/(2(e-1)), and above it
  x_bar(y) + y - 1 where x_bar is the root of an explicit transcendental
  equation. All formulas here were re-derived from the proportionate
  splitting condition and are cross-checked by tests.
* income_fertility_square (everything uniform on unit boxes): not nested;
  the optimal map glues the large-incomes map over the upper half with
  its mirror image below, jumping along the midline where every wife is
  indifferent between a richer and a poorer husband.
* screening (quarter disk vs uniform [1,2]): F(x) = |x|^2 + 1 and the
  price curve (Z, P) = (y^2 (y-1), (3y-1)(y-1)/4).
* product_disks (unit disks at a and b): F(x) = x - a + b with cubic
  payoffs and an explicit price schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import DensityMeasure, Domain, Measure1D
from .hedonic import HedonicProblem, quadratic_disks_problem, rc_problem
from .levelset import BlockSpec, MatchingSolution, SolverConfig, build_matching
from .surplus import Surplus, income_fertility_surplus, pseudo_index_surplus, rc_index_surplus

Y_BREAK = math.e / (2.0 * (math.e - 1.0))


# ---------------------------------------------------------------------------
# Income and fertility, large incomes
# ---------------------------------------------------------------------------

class IncomeFertilityReference:
    """Explicit solution for uniform wives on [0,1]x[1/2,1], husbands on [1/2,1].

    coeff(y) is the coefficient of the iso-husband hyperbola
    income = 1 - y + coeff / fertility, equal to twice the husband's
    marginal payoff net of one: coeff = 2(v'(y) - 1).
    """

    y_break = Y_BREAK

    @staticmethod
    def boundary_equation(x: float, y: float) -> float:
        """Zero iff the hyperbola through (1, x) splits proportionately at y."""
        return x - y + (x + y - 1.0) * math.log(y / (x + y - 1.0))

    @classmethod
    def income_root(cls, y: float) -> float:
        """x_bar(y): income at which the iso-curve meets fertility 1 (y above break)."""
        if not cls.y_break <= y <= 1.0 + 1e-12:
            raise ConfigurationError(f"income_root needs y in [{cls.y_break:.5f}, 1]")
        a, b = 0.5, 1.0
        fa = cls.boundary_equation(a, y)
        for _ in range(200):
            mid = 0.5 * (a + b)
            fm = cls.boundary_equation(mid, y)
            if fa * fm <= 0:
                b = mid
            else:
                a, fa = mid, fm
            if b - a < 1e-14:
                break
        return 0.5 * (a + b)

    @classmethod
    def coeff(cls, y: float) -> float:
        if not 0.5 - 1e-12 <= y <= 1.0 + 1e-12:
            raise ConfigurationError(f"y={y} outside [1/2, 1]")
        if y <= 0.5:
            return 0.0
        if y <= cls.y_break:
            return (y - 0.5) / math.log(y / (y - 0.5))
        return cls.income_root(y) + y - 1.0

    @classmethod
    def fertility_intercept(cls, y: float) -> float:
        """p(y): fertility at which the iso-curve meets income 1/2 (y below break)."""
        if y <= 0.5:
            return 0.0
        return 1.0 / math.log(y / (y - 0.5))

    @classmethod
    def iso_curve_income(cls, y: float, fertility) -> np.ndarray:
        return 1.0 - y + cls.coeff(y) / np.asarray(fertility, dtype=float)

    @classmethod
    def match(cls, fertility: float, income: float) -> float:
        """Partner type: root of coeff(y) = fertility*(income + y - 1).

        psi(y) = coeff(y) - p(x + y - 1) starts nonpositive at y = 1/2
        (coeff vanishes there while the line is already p(x - 1/2) >= 0)
        and reaches 1 - p*x >= 0 at y = 1; the partner is the upcrossing,
        unique for these populations.
        """
        p, x = fertility, income
        if p <= 0.0:
            return 0.5

        def psi(y):
            return cls.coeff(y) - p * (x + y - 1.0)

        a, b = 0.5, 1.0
        if psi(b) <= 0.0:
            return 1.0
        for _ in range(200):
            mid = 0.5 * (a + b)
            if psi(mid) <= 0.0:
                a = mid
            else:
                b = mid
            if b - a < 1e-14:
                break
        return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# Income and fertility on the unit square (not nested)
# ---------------------------------------------------------------------------

class SymmetricSquareReference:
    """Optimal map for uniform measures on [0,1]^2 and [0,1].

    The upper half-population reproduces the large-incomes map; the lower
    half is its mirror image. Wives on the midline income = 1/2 are
    indifferent between the two limits.
    """

    @staticmethod
    def upper_limit(fertility: float) -> float:
        if fertility <= 0:
            return 0.5
        e = math.exp(1.0 / fertility)
        return e / (2.0 * (e - 1.0))

    @classmethod
    def two_limits(cls, fertility: float) -> tuple[float, float]:
        hi = cls.upper_limit(fertility)
        return hi, 1.0 - hi

    @classmethod
    def map(cls, fertility: float, income: float) -> float:
        if income > 0.5:
            return IncomeFertilityReference.match(fertility, income)
        if income < 0.5:
            return 1.0 - IncomeFertilityReference.match(fertility, 1.0 - income)
        raise ConfigurationError("the midline is two-valued; use two_limits")


# ---------------------------------------------------------------------------
# Competitive screening on the quarter disk
# ---------------------------------------------------------------------------

class ScreeningReference:
    """F(x) = |x|^2 + 1, u = |x|^2/2 + |x|^4/4, v = (y-1)^2/4, explicit prices."""

    @staticmethod
    def F(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...d,...d->...", x, x) + 1.0

    @staticmethod
    def u(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = np.einsum("...d,...d->...", x, x)
        return 0.5 * q + 0.25 * q * q

    @staticmethod
    def v(y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return 0.25 * (y - 1.0) ** 2

    @staticmethod
    def price_point(y) -> tuple[np.ndarray, np.ndarray]:
        """Parametric traded curve (Z, P) with Z = |z|^2, parameterized by y."""
        y = np.asarray(y, dtype=float)
        return y * y * (y - 1.0), 0.25 * (3.0 * y - 1.0) * (y - 1.0)


# ---------------------------------------------------------------------------
# Product market with unit-disk populations
# ---------------------------------------------------------------------------

class ProductDisksReference:
    """F(x) = x - a + b between unit disks centered at a and b (a_i, b_i > 1)."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if np.any(self.a <= 1.0) or np.any(self.b <= 1.0):
            raise ConfigurationError("disk centers must exceed 1 componentwise")

    def F(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.a + self.b

    def goods(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x * self.F(x)

    def u(self, x) -> np.ndarray:
        """Buyer payoff up to its additive constant (con  = 0 here)."""
        x = np.asarray(x, dtype=float)
        d = self.a - self.b
        return np.sum(x ** 3 / 3.0 - 0.5 * d * x ** 2, axis=-1)

    def v(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d = self.a - self.b
        return np.sum((d + y) ** 3, axis=-1) / 6.0

    def price(self, z) -> np.ndarray:
        """Closed-form schedule, additive constant set to zero."""
        z = np.asarray(z, dtype=float)
        d = self.a - self.b
        return np.sum(((d * d + 4.0 * z) ** 1.5 + d * (d * d + 6.0 * z)),
                      axis=-1) / 12.0


# ---------------------------------------------------------------------------
# Preset problems
# ---------------------------------------------------------------------------

@dataclass
class Preset:
    name: str
    surplus: Surplus
    mu: DensityMeasure
    nu: Measure1D
    config: SolverConfig
    hedonic: Optional[HedonicProblem] = None
    nu_product: Optional[DensityMeasure] = None      # vector-y producer measure
    reference: object = None
    notes: tuple = ()


def income_fertility_large_preset(resolution: int = 512, y_grid: int = 257) -> Preset:
    return Preset(
        name="example1",
        surplus=income_fertility_surplus(),
        mu=DensityMeasure(Domain.box([0.0, 0.5], [1.0, 1.0]), resolution=resolution),
        nu=Measure1D.uniform(0.5, 1.0),
        config=SolverConfig(y_grid=y_grid),
        reference=IncomeFertilityReference,
    )


def income_fertility_square_preset(resolution: int = 512, y_grid: int = 257,
                                   decomposed: bool = True) -> Preset:
    blocks = (
        BlockSpec(x_lo=(0.0, 0.0), x_hi=(1.0, 0.5), y_lo=0.0, y_hi=0.5),
        BlockSpec(x_lo=(0.0, 0.5), x_hi=(1.0, 1.0), y_lo=0.5, y_hi=1.0),
    ) if decomposed else ()
    return Preset(
        name="example2",
        surplus=income_fertility_surplus(),
        mu=DensityMeasure(Domain.box([0.0, 0.0], [1.0, 1.0]), resolution=resolution),
        nu=Measure1D.uniform(0.0, 1.0),
        config=SolverConfig(y_grid=y_grid, blocks=blocks),
        reference=SymmetricSquareReference,
        notes=("declared symmetry decomposition along income = 1/2",) if decomposed else (),
    )


def anticorrelated_preset(epsilon: float = 0.01, resolution: int = 512,
                          y_grid: int = 257) -> Preset:
    """Fertility/income blocks reflecting age anticorrelation.

    epsilon = 0 leaves the support disconnected (outside the regularity
    hypotheses of the splitting theory); any positive epsilon restores a
    connected Lipschitz domain. The run is a numerical exploration; no
    closed form exists.
    """
    notes = ()
    if epsilon <= 0:
        notes = ("epsilon = 0: support is disconnected, outside the splitting "
                 "theory's hypotheses; results are exploratory",)
        epsilon = 0.0
    dom = Domain.box_union([
        Domain.box([0.5, 0.5], [1.0, 0.75 + epsilon]),
        Domain.box([0.0, 0.75], [0.5, 1.0]),
    ])
    return Preset(
        name="example3",
        surplus=income_fertility_surplus(),
        mu=DensityMeasure(dom, resolution=resolution),
        nu=Measure1D.uniform(0.5, 1.0),
        config=SolverConfig(y_grid=y_grid),
        notes=notes,
    )


def screening_preset(resolution: int = 512, y_grid: int = 257) -> Preset:
    return Preset(
        name="rc",
        surplus=rc_index_surplus(m=2),
        mu=DensityMeasure(Domain.disk_sector([0.0, 0.0], 1.0, (1, 1)),
                          resolution=resolution),
        nu=Measure1D.uniform(1.0, 2.0),
        config=SolverConfig(y_grid=y_grid),
        hedonic=rc_problem(n=2),
        reference=ScreeningReference,
    )


def product_disks_preset(a=(2.0, 2.0), b=(3.0, 3.0), resolution: int = 384,
                         y_grid: int = 257) -> Preset:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return Preset(
        name="hedonic_disks",
        surplus=rc_index_surplus(m=2),     # placeholder slot; solved coordinatewise
        mu=DensityMeasure(Domain.disk_sector(a, 1.0, None), resolution=resolution),
        nu=Measure1D.uniform(b[0] - 1.0, b[0] + 1.0),   # first marginal slot
        config=SolverConfig(y_grid=y_grid),
        hedonic=quadratic_disks_problem(n=2),
        nu_product=DensityMeasure(Domain.disk_sector(b, 1.0, None),
                                  resolution=resolution),
        reference=ProductDisksReference(a, b),
    )


def pseudo_index_preset(seed: int = 0, resolution: int = 192, y_grid: int = 129) -> Preset:
    """Random population pair under the pseudo-index catalog surplus."""
    rng = np.random.default_rng(seed)
    a1, a2 = rng.uniform(0.0, 0.9, size=2)

    def dens(x):
        return 1.0 + a1 * x[..., 0] + a2 * x[..., 1]

    lo = rng.uniform(0.0, 0.3)
    hi = rng.uniform(0.7, 1.0)
    b = rng.uniform(0.0, 0.9)
    nu = Measure1D.from_density(lambda y: 1.0 + b * y, lo, hi)
    return Preset(
        name=f"pseudo_index_{seed}",
        surplus=pseudo_index_surplus(),
        mu=DensityMeasure(Domain.box([0.0, 0.0], [1.0, 1.0]), dens,
                          resolution=resolution),
        nu=nu,
        config=SolverConfig(y_grid=y_grid),
    )


PRESETS = {
    "example1": income_fertility_large_preset,
    "example2": income_fertility_square_preset,
    "example3": anticorrelated_preset,
    "rc": screening_preset,
    "hedonic_disks": product_disks_preset,
    "pseudo_index": pseudo_index_preset,
}


def get_preset(name: str, **kwargs) -> Preset:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kwargs)


def example3_run(epsilon: float = 0.01, resolution: int = 256,
                 y_grid: int = 129) -> MatchingSolution:
    """Solve the anticorrelated-blocks population; see anticorrelated_preset."""
    preset = anticorrelated_preset(epsilon=epsilon, resolution=resolution,
                                   y_grid=y_grid)
    sol = build_matching(preset.surplus, preset.mu, preset.nu, preset.config)
    sol.preset_notes = preset.notes
    return sol


def reference_comparison(preset: Preset, solution: MatchingSolution,
                         n_sample: int = 400, seed: int = 0) -> dict:
    """Max deviations of the computed solution from the preset's closed form."""
    ref = preset.reference
    out: dict = {"preset": preset.name}
    if ref is None:
        return out
    rng = np.random.default_rng(seed)
    xs = preset.mu.stratified_sample(n_sample, rng)
    if ref is IncomeFertilityReference:
        ys = solution.y_grid
        inner = (ys >= 0.55) & (ys <= 0.95)
        k2 = 2.0 * (solution.split.k[inner] - 1.0)
        k2_ref = np.array([ref.coeff(t) for t in ys[inner]])
        out["max_coeff_error"] = float(np.max(np.abs(k2 - k2_ref)))
        fref = np.array([ref.match(p, x) for p, x in xs])
        out["max_partner_error"] = float(np.max(np.abs(solution.F(xs) - fref)))
    elif ref is SymmetricSquareReference:
        keep = np.abs(xs[:, 1] - 0.5) > 1e-2
        fref = np.array([ref.map(p, x) for p, x in xs[keep]])
        out["max_partner_error"] = float(np.max(np.abs(solution.F(xs[keep]) - fref)))
    elif ref is ScreeningReference:
        out["max_partner_error"] = float(np.max(np.abs(solution.F(xs) - ref.F(xs))))
        out["max_v_error"] = float(np.max(np.abs(
            solution.v(solution.y_grid) - ref.v(solution.y_grid))))
        uerr = solution.u(xs) - ref.u(xs)
        out["max_u_error"] = float(np.max(np.abs(uerr - uerr.mean())))
    elif isinstance(ref, ProductDisksReference):
        out["max_partner_error"] = float(np.max(np.abs(solution.F(xs) - ref.F(xs))))
    return out
