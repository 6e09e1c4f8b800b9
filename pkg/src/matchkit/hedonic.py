"""Hedonic pricing via the matching equivalence.

A hedonic market (buyers x, producers y, products z, quasi-linear payoffs)
reduces to a transferable-utility matching problem with pairwise surplus
s(x, y) = max_z U(x, z) - c(y, z). Solving the matching recovers buyer and
producer payoffs; any price schedule squeezed between
sup_x (U(x, z) - u(x)) and inf_y (v(y) + c(y, z)) supports the allocation
as a price-taking equilibrium, with the traded prices pinned by
P = v(y) + c(y, z) at matched pairs.

Two quadratic catalog families have closed-form inner maxima: the
competitive screening market (scalar producer productivity, cost
|z|^2 / 2y, reduced surplus y|x|^2 / 2) and the product market with
coordinatewise costs z_i^2 / 2 y_i (reduced surplus sum x_i^2 y_i / 2,
solved one coordinate at a time against the producer marginals). A
numeric-ascent fallback covers non-catalog utilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InconsistencyError, InfeasibleError
from .geometry import DensityMeasure, Domain, Measure1D
from .levelset import MatchingSolution, SolverConfig, build_matching
from .surplus import (Surplus, coordinate_quadratic_surplus, finite_difference_surplus,
                      rc_index_surplus)

PRICE_TOL = 1e-3
Z_COLLISION_TOL = 1e-6


@dataclass(frozen=True)
class HedonicProblem:
    """Buyer utility, producer cost, and the product space they share."""

    buyer_utility: Callable          # U(x, z): (..., n), (..., d) -> (...)
    producer_cost: Callable          # c(y, z): (...) or (..., y_dim), (..., d) -> (...)
    product_dim: int
    y_dim: int = 1
    z_solver: str = "closed_form_quadratic"
    z_star: Optional[Callable] = None       # argmax map, closed-form entries
    z_box: Optional[tuple] = None           # (lo, hi) arrays for numeric ascent
    name: str = ""

    def goods(self, x, y) -> np.ndarray:
        if self.z_star is None:
            raise ConfigurationError("no closed-form argmax; use numeric reduction")
        return self.z_star(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def rc_problem(n: int = 2, z_pad: float = 1.1,
               x_scale: float = 1.0, y_hi: float = 2.0) -> HedonicProblem:
    """Competitive screening market: U = x.z, c = |z|^2 / 2y, scalar y.

    The product box {y x} is padded by z_pad, matching the assumption that
    the efficient goods are interior.
    """

    def U(x, z):
        return np.einsum("...d,...d->...", x, z)

    def c(y, z):
        return np.einsum("...d,...d->...", z, z) / (2.0 * np.asarray(y))

    def z_star(x, y):
        return np.asarray(y)[..., None] * np.asarray(x)

    hi = np.full(n, z_pad * x_scale * y_hi)
    return HedonicProblem(buyer_utility=U, producer_cost=c, product_dim=n,
                          y_dim=1, z_star=z_star, z_box=(np.zeros(n), hi),
                          name="rc")


def quadratic_disks_problem(n: int = 2) -> HedonicProblem:
    """Product market with coordinatewise costs c = sum z_i^2 / 2 y_i."""

    def U(x, z):
        return np.einsum("...d,...d->...", x, z)

    def c(y, z):
        return 0.5 * np.einsum("...d,...d->...", z, z / np.asarray(y))

    def z_star(x, y):
        return np.asarray(x) * np.asarray(y)

    return HedonicProblem(buyer_utility=U, producer_cost=c, product_dim=n,
                          y_dim=n, z_star=z_star, name="quadratic_disks")


# ---------------------------------------------------------------------------
# Reduction to a matching surplus
# ---------------------------------------------------------------------------

def reduce_to_matching(problem: HedonicProblem, m: Optional[int] = None) -> Surplus:
    """Pairwise surplus s(x, y) = max_z U(x, z) - c(y, z) for scalar y."""
    if problem.y_dim != 1:
        raise ConfigurationError(
            "vector-y problems reduce coordinatewise; see reduce_coordinatewise")
    if problem.z_solver == "closed_form_quadratic":
        if problem.name == "rc":
            return rc_index_surplus(m=problem.product_dim)
        raise ConfigurationError(f"no closed form for problem {problem.name!r}")
    return _numeric_reduction(problem, m or problem.product_dim)


def reduce_coordinatewise(problem: HedonicProblem) -> list[Surplus]:
    """Additive pieces s_i(x, t) = x_i^2 t / 2 of the coordinatewise market."""
    if problem.name != "quadratic_disks":
        raise ConfigurationError("coordinatewise reduction is for the disks catalog")
    n = problem.product_dim
    return [coordinate_quadratic_surplus(i, n) for i in range(n)]


def _numeric_reduction(problem: HedonicProblem, m: int) -> Surplus:
    if problem.z_box is None:
        raise ConfigurationError("numeric ascent requires a z_box")
    lo = np.asarray(problem.z_box[0], dtype=float)
    hi = np.asarray(problem.z_box[1], dtype=float)
    d = lo.size

    def inner_max(x1: np.ndarray, y1: float) -> float:
        best = -np.inf
        starts = [0.5 * (lo + hi)]
        for corner in range(2 ** d):
            starts.append(np.where([(corner >> i) & 1 for i in range(d)], hi, lo))
        for z0 in starts:
            z = z0.astype(float).copy()
            step = float(np.max(hi - lo)) / 4 + 1e-9
            val = problem.buyer_utility(x1, z) - problem.producer_cost(y1, z)
            converged = False
            for _ in range(400):
                g = np.empty(d)
                for dd in range(d):
                    e = np.zeros(d)
                    e[dd] = 1e-6
                    g[dd] = (problem.buyer_utility(x1, z + e)
                             - problem.producer_cost(y1, z + e)
                             - problem.buyer_utility(x1, z - e)
                             + problem.producer_cost(y1, z - e)) / 2e-6
                z_new = np.clip(z + step * g, lo, hi)
                val_new = (problem.buyer_utility(x1, z_new)
                           - problem.producer_cost(y1, z_new))
                if val_new > val + 1e-14:
                    z, val = z_new, val_new
                else:
                    step *= 0.5
                    if step < 1e-10:
                        converged = True
                        break
            if not converged:
                raise InfeasibleError(
                    f"inner product maximization did not converge at x={x1}, y={y1}")
            best = max(best, val)
        return best

    def value(x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        yb = np.broadcast_to(np.asarray(y, dtype=float), x.shape[:-1])
        flat_x = x.reshape(-1, x.shape[-1])
        flat_y = yb.reshape(-1)
        out = np.array([inner_max(flat_x[i], float(flat_y[i]))
                        for i in range(flat_x.shape[0])])
        return out.reshape(yb.shape)

    return finite_difference_surplus(m, value, name="hedonic_numeric")


# ---------------------------------------------------------------------------
# Coordinatewise product-market solve
# ---------------------------------------------------------------------------

class ProductMatching:
    """Glued coordinatewise solution of the separable product market.

    The surplus sum x_i^2 y_i / 2 couples coordinate i of the buyers only
    with coordinate i of the producers, so each coordinate is its own
    matching problem between the respective marginals; the product of the
    coordinate maps transports the buyer measure onto the producer measure
    whenever the declared separability is consistent (checked downstream
    by the price-squeeze and closed-form gates).
    """

    def __init__(self, coords: Sequence[MatchingSolution], s_total: Callable):
        self.coords = list(coords)
        self.s_total = s_total

    def F(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([sol.F(x[:, [i]]) for i, sol in enumerate(self.coords)],
                        axis=-1)

    def v(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return sum(sol.v(y[..., i]) for i, sol in enumerate(self.coords))

    def u(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        fy = self.F(x)
        return np.asarray(self.s_total(x, fy)) - self.v(fy)

    @property
    def reports(self):
        return [sol.nested for sol in self.coords]


def solve_quadratic_disks(problem: HedonicProblem, mu: DensityMeasure,
                          nu2: DensityMeasure,
                          config: Optional[SolverConfig] = None,
                          marginal_resolution: int = 4096) -> ProductMatching:
    """Coordinatewise nested solves between buyer and producer marginals.

    Each coordinate sees x only through x_i, so the population can be
    projected first: the solve runs on the 1-d buyer marginal, whose
    quadrature is much finer than an axis-aligned threshold on the 2-d
    grid could resolve.
    """
    if problem.name != "quadratic_disks":
        raise ConfigurationError("this pipeline is for the disks catalog")
    cfg = config or SolverConfig()
    n = problem.product_dim
    coords = []
    for i in range(n):
        mu_i = mu.marginal(i)
        nu_i = nu2.marginal(i)
        dom = Domain.box([mu_i.lo], [mu_i.hi])
        mu_1d = DensityMeasure(dom, lambda p, m=mu_i: m.density(p[..., 0]),
                               resolution=marginal_resolution)
        s_i = coordinate_quadratic_surplus(0, 1)
        coords.append(build_matching(s_i, mu_1d, nu_i, cfg))

    def s_total(x, y):
        return 0.5 * np.einsum("...d,...d->...", np.asarray(x) ** 2, np.asarray(y))

    return ProductMatching(coords, s_total)


# ---------------------------------------------------------------------------
# Goods and prices
# ---------------------------------------------------------------------------

def equilibrium_goods(solution, problem: HedonicProblem, x) -> np.ndarray:
    """Product bought by each buyer: z(x) = argmax at (x, F(x))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    fy = solution.F(x)
    return problem.goods(x, fy)


@dataclass(frozen=True)
class PriceSchedule:
    traded_z: np.ndarray            # (k, d)
    traded_price: np.ndarray        # (k,)
    traded_x: np.ndarray
    traded_y: np.ndarray
    lower_env: Callable             # z -> sup_x U(x, z) - u(x)
    upper_env: Callable             # z -> inf_y v(y) + c(y, z)
    split_identity_error: float     # max |U(x, z) - u(x) - P| at traded points


def price_schedule(solution, problem: HedonicProblem, x_sample,
                   y_env_points: Optional[np.ndarray] = None,
                   x_env_points: Optional[np.ndarray] = None,
                   price_tol: float = PRICE_TOL) -> PriceSchedule:
    """Traded prices P = v(y) + c(y, z) plus the squeeze envelopes.

    Envelopes are numeric suprema/infima over atom grids; the traded price
    must sit inside the band and must equal U(x, z) - u(x) at the matched
    buyer, both within price_tol (an inconsistency here means the payoffs
    are wrong, so it raises).
    """
    x = np.atleast_2d(np.asarray(x_sample, dtype=float))
    fy = solution.F(x)
    z = problem.goods(x, fy)
    v_at = np.asarray(solution.v(fy), dtype=float).reshape(-1)
    price = v_at + np.asarray(problem.producer_cost(fy, z), dtype=float).reshape(-1)

    u_at = np.asarray(solution.u(x), dtype=float).reshape(-1)
    buyer_side = np.asarray(problem.buyer_utility(x, z), dtype=float).reshape(-1) - u_at
    split_err = float(np.max(np.abs(buyer_side - price))) if price.size else 0.0
    if split_err > price_tol:
        raise InconsistencyError(
            f"traded price disagrees with the buyer split by {split_err:.3e}")

    if x_env_points is None:
        x_env_points = x
    if y_env_points is None:
        y_env_points = np.atleast_2d(fy if fy.ndim > 1 else fy[:, None])
    x_env = np.atleast_2d(np.asarray(x_env_points, dtype=float))
    y_env = np.atleast_2d(np.asarray(y_env_points, dtype=float))
    u_env = np.asarray(solution.u(x_env), dtype=float).reshape(-1)
    v_env = np.asarray(solution.v(y_env if problem.y_dim > 1 else y_env[:, 0]),
                       dtype=float).reshape(-1)

    def lower_env(zq):
        zq = np.atleast_2d(np.asarray(zq, dtype=float))
        out = np.empty(zq.shape[0])
        for t in range(zq.shape[0]):
            out[t] = float(np.max(problem.buyer_utility(x_env, zq[t]) - u_env))
        return out

    def upper_env(zq):
        zq = np.atleast_2d(np.asarray(zq, dtype=float))
        out = np.empty(zq.shape[0])
        for t in range(zq.shape[0]):
            yq = y_env if problem.y_dim > 1 else y_env[:, 0]
            out[t] = float(np.min(v_env + problem.producer_cost(yq, zq[t])))
        return out

    lo_band = lower_env(z)
    hi_band = upper_env(z)
    if np.any(lo_band - hi_band > price_tol):
        worst = float(np.max(lo_band - hi_band))
        raise InconsistencyError(f"price envelopes cross by {worst:.3e}")
    return PriceSchedule(traded_z=z, traded_price=price, traded_x=x, traded_y=fy,
                         lower_env=lower_env, upper_env=upper_env,
                         split_identity_error=split_err)


# ---------------------------------------------------------------------------
# Bunching
# ---------------------------------------------------------------------------

def no_bunching_check(coupling, problem: HedonicProblem,
                      z_tol: float = Z_COLLISION_TOL) -> dict:
    """Flag pairs of distinct buyers whose equilibrium goods coincide.

    Purity of the reduced matching makes collisions impossible for the
    screening catalog; identical buyer atoms are outside that statement
    and are reported with a flag.
    """
    if problem.y_dim != 1:
        raise ConfigurationError("bunching check runs on scalar-producer markets")
    prob = coupling.problem
    x = prob.x_atoms
    y = prob.y_atoms[coupling.assignment]
    z = problem.goods(x, y)
    n = z.shape[0]
    diff = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1)
    same_x = np.all(x[:, None, :] == x[None, :, :], axis=-1)
    iu = np.triu_indices(n, k=1)
    hit = diff[iu] <= z_tol
    collisions = []
    for idx in np.nonzero(hit)[0]:
        i, j = iu[0][idx], iu[1][idx]
        collisions.append({"i": int(i), "j": int(j),
                           "gap": float(diff[i, j]),
                           "identical_x": bool(same_x[i, j])})
    return {"collisions": collisions, "n_pairs": int(hit.size),
            "min_gap": float(diff[iu].min()) if hit.size else float("inf")}
