"""Nested population-splitting solver for multi-to-one dimensional matching.

For each husband type y the solver finds the threshold k such that the
sublevel set {x : s_y(x, y) <= k} carries exactly the mass nu((-inf, y]).
Monotonicity of the sublevel mass in k makes this a bisection problem;
plateaus (mass gaps) are bracketed from both sides. The thresholds k(y)
integrate to the 1-d payoff v, the matching map F sends every x to the y
whose iso-husband set it lies on, and the wives' payoff follows from
u = s(x, F(x)) - v(F(x)).

Whether the sublevel sets actually nest is a property of (s, mu, nu), not
of s alone, so the solver ships a diagnostic battery: sampled monotone
inclusion, the outward-velocity criterion k' - s_yy >= 0 on iso-husband
samples, uniqueness of the proportionate-splitting root per x, and
transversality of iso-set endpoints against the domain boundary. A failed
diagnostic downgrades the result to a flagged heuristic unless a block
decomposition of the population was declared, in which case each block is
solved by the same construction and the pieces are glued.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ._parallel import parallel_map
from .errors import ConfigurationError, InfeasibleError
from .geometry import DensityMeasure, Measure1D
from .surplus import Surplus, check_nondegeneracy

SPLIT_TOL = 1e-6
PLATEAU_TOL = 1e-6
BISECT_CAP = 80
STAB_TOL = 1e-3
CC_TOL = 1e-3
ANGLE_TOL = 0.0087         # ~0.5 degrees on normal alignment
INCLUSION_TOL = 5e-5


@dataclass(frozen=True)
class SolverConfig:
    y_grid: int = 257
    v0: float = 0.0
    split_tol: float = SPLIT_TOL
    plateau_tol: float = PLATEAU_TOL
    bisect_cap: int = BISECT_CAP
    stab_tol: float = STAB_TOL
    cc_tol: float = CC_TOL
    inclusion_tol: float = INCLUSION_TOL
    dynamic_fail_tol: float = 1e-3
    angle_tol: float = ANGLE_TOL
    diag_sample: int = 4096
    diag_strides: tuple = (1, 2, 4, 8)
    transversality_sample: int = 65
    iso_sample_cap: int = 256
    blocks: tuple = ()         # declared decomposition: tuple of BlockSpec


@dataclass(frozen=True)
class BlockSpec:
    """One block of a declared population decomposition."""
    x_lo: tuple
    x_hi: tuple
    y_lo: float
    y_hi: float


# ---------------------------------------------------------------------------
# Sublevel-mass machinery
# ---------------------------------------------------------------------------

class SublevelSolver:
    """Threshold solver for one (mu, s) pair.

    Queries evaluate s_y on the coarse cell centers, then re-resolve only
    the cells whose neighbor variation says they might straddle the
    threshold; those are re-counted from the precomputed subcell weights.
    """

    def __init__(self, mu: DensityMeasure, s: Surplus):
        if mu.dim != s.m:
            raise ConfigurationError(
                f"measure dimension {mu.dim} does not match surplus m={s.m}")
        self.mu = mu
        self.s = s
        self._shape = (mu.resolution,) * mu.dim

    def field(self, y: float) -> np.ndarray:
        with np.errstate(all="ignore"):
            g = np.asarray(self.s.d_y(self.mu.cell_centers, y), dtype=float)
        return g

    def band(self, gc: np.ndarray) -> np.ndarray:
        """Per-cell bound on in-cell variation of g, from neighbor differences."""
        G = gc.reshape(self._shape).copy()
        G[~self.mu.occupied_cell.reshape(self._shape)] = np.nan
        m = self.mu.dim
        b = np.zeros(self._shape)
        for ax in range(m):
            d = np.abs(np.diff(G, axis=ax))
            d = np.where(np.isnan(d), np.inf, d)
            lo = [slice(None)] * m
            hi = [slice(None)] * m
            lo[ax] = slice(1, None)
            hi[ax] = slice(None, -1)
            np.maximum(b[tuple(lo)], d, out=b[tuple(lo)])
            np.maximum(b[tuple(hi)], d, out=b[tuple(hi)])
        b = b.reshape(-1)
        return 2.0 * b + 1e-12

    def _refined(self, y: float, gc: np.ndarray, band: np.ndarray,
                 k_lo: float, k_hi: float):
        """Mass function valid for thresholds in [k_lo, k_hi].

        Cells whose value band intersects the range are re-counted at
        subcell resolution; the rest are counted wholesale by center value.
        """
        occ = self.mu.occupied_cell
        sel = occ & (gc + band >= k_lo) & (gc - band <= k_hi)
        cells = np.nonzero(sel)[0]
        w_solid = np.where(~sel & occ, self.mu.cell_weight, 0.0)
        g_solid = gc
        if cells.size:
            pts = self.mu.sub_points(cells)
            with np.errstate(all="ignore"):
                gs = np.asarray(self.s.d_y(pts, y), dtype=float)
            ws = self.mu.w_sub_by_cell[cells]
        else:
            gs = np.zeros((0, 1))
            ws = np.zeros((0, 1))

        def mass(k: float) -> float:
            m0 = float(w_solid[g_solid <= k].sum())
            if gs.size:
                m0 += float((ws * (gs <= k)).sum())
            return m0

        mass.selected = sel
        mass.sub_values = gs
        mass.sub_weights = ws
        mass.cells = cells
        return mass

    def mass_below(self, y: float, k: float) -> float:
        gc = self.field(y)
        band = self.band(gc)
        return self._refined(y, gc, band, k, k)(k)

    def value_range(self, gc: np.ndarray, band: np.ndarray) -> tuple[float, float]:
        g = gc[self.mu.occupied_cell]
        g = g[np.isfinite(g)]
        if g.size == 0:
            raise InfeasibleError("level function is nowhere finite on the domain")
        # Cell centers undershoot the extremes by up to the in-cell variation.
        pad = float(band[np.isfinite(band)].max(initial=0.0))
        pad += 1e-9 * max(1.0, float(g.max() - g.min())) + 1e-12
        return float(g.min()) - pad, float(g.max()) + pad

    def solve_threshold(self, y: float, target: float,
                        split_tol: float = SPLIT_TOL,
                        bisect_cap: int = BISECT_CAP) -> "SplitPoint":
        """Bracket the threshold interval [k-, k+] for one husband type."""
        gc = self.field(y)
        band = self.band(gc)
        lo, hi = self.value_range(gc, band)

        # Coarse pass: exact inversion of the cell-center step function.
        occ = self.mu.occupied_cell
        order = np.argsort(gc[occ], kind="stable")
        g_s = gc[occ][order]
        cum = np.cumsum(self.mu.cell_weight[occ][order])

        def coarse_mass(k: float) -> float:
            idx = np.searchsorted(g_s, k, side="right")
            return float(cum[idx - 1]) if idx > 0 else 0.0

        def coarse_edge(level: float) -> float:
            if level <= 0:
                return lo
            i = np.searchsorted(cum, level, side="left")
            if i >= g_s.size:
                return hi
            return float(g_s[i])

        k_lo0 = coarse_edge(target - split_tol)
        k_hi0 = coarse_edge(target + split_tol)

        k_minus = k_plus = None
        mass = None
        for _ in range(4):
            sel = occ & (gc + band >= k_lo0 - 1e-12) & (gc - band <= k_hi0 + 1e-12)
            cells = np.nonzero(sel)[0]
            if cells.size:
                pts = self.mu.sub_points(cells)
                with np.errstate(all="ignore"):
                    gs = np.asarray(self.s.d_y(pts, y), dtype=float)
                ws = self.mu.w_sub_by_cell[cells]
            else:
                gs = np.zeros((0, 1))
                ws = np.zeros((0, 1))
            g_sel = gc[cells]
            w_sel = self.mu.cell_weight[cells]

            def mass(k: float) -> float:
                m0 = coarse_mass(k)
                if cells.size:
                    m0 -= float((w_sel * (g_sel <= k)).sum())
                    m0 += float((ws * (gs <= k)).sum())
                return m0

            mass.selected = sel
            mass.sub_values = gs
            mass.sub_weights = ws
            mass.cells = cells
            k_minus = self._edge(mass, lo, hi, target - split_tol, bisect_cap)
            k_plus = self._edge(mass, lo, hi, target + split_tol, bisect_cap)
            covered = ((gc + band < min(k_minus, k_lo0))
                       | (gc - band > max(k_plus, k_hi0))
                       | sel | ~occ)
            if covered.all():
                break
            k_lo0 = min(k_lo0, k_minus) - float(np.median(band[np.isfinite(band)]))
            k_hi0 = max(k_hi0, k_plus) + float(np.median(band[np.isfinite(band)]))
        mid = 0.5 * (k_minus + k_plus)
        resid = abs(mass(mid) - target)
        iso = self._iso_sample(mass, mid, band)
        return SplitPoint(y=y, k_minus=k_minus, k_plus=k_plus, resid=resid,
                          iso_points=iso)

    @staticmethod
    def _edge(mass: Callable, lo: float, hi: float, level: float,
              cap: int) -> float:
        """Smallest k with mass(k) >= level (monotone bisection)."""
        if mass(lo) >= level:
            return lo
        if mass(hi) < level:
            if level > 1.0:
                return hi
            raise InfeasibleError(
                f"sublevel mass never reaches {level:.6g}: measure masses inconsistent")
        a, b = lo, hi
        for _ in range(cap):
            mid = 0.5 * (a + b)
            if mass(mid) >= level:
                b = mid
            else:
                a = mid
            if b - a <= 1e-15 * max(1.0, abs(a)) :
                break
        return b

    def _iso_sample(self, mass: Callable, k: float, band: np.ndarray,
                    cap: int = 256) -> np.ndarray:
        """Points close to the level set {s_y = k}, for surface diagnostics."""
        if mass.cells.size == 0:
            return np.zeros((0, self.mu.dim))
        pts = self.mu.sub_points(mass.cells).reshape(-1, self.mu.dim)
        gap = np.abs(mass.sub_values.reshape(-1) - k)
        w = mass.sub_weights.reshape(-1)
        ok = w > 0
        if not ok.any():
            return np.zeros((0, self.mu.dim))
        pts, gap = pts[ok], gap[ok]
        cells_band = np.repeat(band[mass.cells] / self.mu.subsample, mass.sub_values.shape[1])[ok]
        near = gap <= np.maximum(cells_band, 1e-12)
        if near.sum() > cap:
            idx = np.argsort(gap[near])[:cap]
            return pts[near][idx]
        if near.any():
            return pts[near]
        idx = np.argsort(gap)[: min(cap, gap.size)]
        return pts[idx]


@dataclass(frozen=True)
class SplitPoint:
    y: float
    k_minus: float
    k_plus: float
    resid: float
    iso_points: np.ndarray


@dataclass(frozen=True)
class SplitFunction:
    """Thresholds on the y grid; k = k_plus is the selected branch.

    Interpolation between grid solves is monotone piecewise-linear, so v'
    stays consistent with the bisection outputs.
    """
    y_grid: np.ndarray
    k_minus: np.ndarray
    k_plus: np.ndarray
    resid: np.ndarray

    @property
    def k(self) -> np.ndarray:
        return self.k_plus

    def k_at(self, y) -> np.ndarray:
        return np.interp(y, self.y_grid, self.k_plus)

    def plateau_width(self) -> np.ndarray:
        return self.k_plus - self.k_minus


# ---------------------------------------------------------------------------
# Matching construction
# ---------------------------------------------------------------------------

def _scan_matches(s: Surplus, y_grid: np.ndarray, k: np.ndarray, x: np.ndarray,
                  collect_roots: bool = False):
    """March the y grid; locate sign changes of phi(y) = s_y(x, y) - k(y).

    Returns (selected y, crossing count, boundary flag) per point; with
    collect_roots also a list of root arrays. The selected root is the
    largest downcrossing (ties at discontinuities resolve to the larger y).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    npts = x.shape[0]
    n = y_grid.size
    with np.errstate(all="ignore"):
        phi_prev = np.asarray(s.d_y(x, y_grid[0]), dtype=float) - k[0]
    count = np.zeros(npts, dtype=int)
    last_down = np.full(npts, np.nan)
    roots = [[] for _ in range(npts)] if collect_roots else None
    start_below = phi_prev <= 0
    for j in range(1, n):
        with np.errstate(all="ignore"):
            phi = np.asarray(s.d_y(x, y_grid[j]), dtype=float) - k[j]
        down = (phi_prev > 0) & (phi <= 0)
        up = (phi_prev <= 0) & (phi > 0)
        if down.any() or up.any():
            denom = phi_prev - phi
            with np.errstate(all="ignore"):
                t = np.where(np.abs(denom) > 0, phi_prev / denom, 1.0)
            yr = y_grid[j - 1] + np.clip(t, 0.0, 1.0) * (y_grid[j] - y_grid[j - 1])
            count += down
            count += up
            last_down = np.where(down, yr, last_down)
            if collect_roots:
                for i in np.nonzero(down | up)[0]:
                    roots[i].append(float(yr[i]))
        phi_prev = phi
    end_above = phi_prev > 0
    selected = np.where(np.isnan(last_down),
                        np.where(end_above, y_grid[-1], y_grid[0]),
                        last_down)
    # A point that starts below the first level set counts as matched at y_lo.
    boundary = np.isnan(last_down) & (end_above | start_below)
    count = np.where(np.isnan(last_down) & start_below & ~end_above,
                     np.maximum(count, 1), count)
    if collect_roots:
        return selected, count, boundary, roots
    return selected, count, boundary


@dataclass(frozen=True)
class NestednessReport:
    verdict: str                                # "nested" | "not_nested" | "inconclusive"
    monotone_inclusion_violations: tuple        # (y, y', witness x)
    dynamic_criterion_min: float
    unique_splitting_failures: tuple            # (x, roots)
    transversality_flags: tuple                 # y values in the bad set
    plateau_max: float = 0.0
    notes: tuple = ()

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "monotone_inclusion_violations": len(self.monotone_inclusion_violations),
            "dynamic_criterion_min": self.dynamic_criterion_min,
            "unique_splitting_failures": len(self.unique_splitting_failures),
            "transversality_flags": list(map(float, self.transversality_flags)),
            "plateau_max": self.plateau_max,
            "notes": list(self.notes),
        }


class MatchingSolution:
    """Stable matching data: split thresholds, payoffs, map, diagnostics."""

    def __init__(self, s: Surplus, mu: DensityMeasure, nu: Measure1D,
                 split: SplitFunction, v_grid: np.ndarray,
                 config: SolverConfig, blocks: Optional[list] = None,
                 block_specs: Optional[Sequence[BlockSpec]] = None):
        self.s = s
        self.mu = mu
        self.nu = nu
        self.split = split
        self.y_grid = split.y_grid
        self.v_grid = v_grid
        self.config = config
        self.blocks = blocks or []          # per-block MatchingSolution
        self.block_specs = list(block_specs or [])
        self.nested: Optional[NestednessReport] = None
        self.block_reports: list = []
        self._f_cell = None
        self._u_cell = None

    # -- payoffs ------------------------------------------------------------

    def v(self, y) -> np.ndarray:
        return np.interp(y, self.y_grid, self.v_grid)

    def u(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        fy = self.F(x)
        return np.asarray(self.s.value(x, fy)) - self.v(fy)

    # -- the matching map -----------------------------------------------------

    def F(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.blocks:
            sel, _, _ = _scan_matches(self.s, self.y_grid, self.split.k, x)
            return sel
        out = np.full(x.shape[0], np.nan)
        for spec, sol in zip(self.block_specs, self.blocks):
            inside = np.all((x >= np.asarray(spec.x_lo) - 1e-12)
                            & (x <= np.asarray(spec.x_hi) + 1e-12), axis=-1)
            if inside.any():
                out[inside] = sol.F(x[inside])
        missing = np.isnan(out)
        if missing.any():
            sel, _, _ = _scan_matches(self.s, self.y_grid, self.split.k, x[missing])
            out[missing] = sel
        return out

    def match_roots(self, x) -> list:
        """All proportionate-splitting roots per point (un-nested reporting)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.blocks:
            out = [[] for _ in range(x.shape[0])]
            for spec, sol in zip(self.block_specs, self.blocks):
                inside = np.all((x >= np.asarray(spec.x_lo) - 1e-12)
                                & (x <= np.asarray(spec.x_hi) + 1e-12), axis=-1)
                if inside.any():
                    sub = sol.match_roots(x[inside])
                    for slot, r in zip(np.nonzero(inside)[0], sub):
                        out[slot].extend(r)
            return out
        sel, count, boundary, roots = _scan_matches(
            self.s, self.y_grid, self.split.k, x, collect_roots=True)
        out = []
        for i in range(x.shape[0]):
            r = roots[i] if roots[i] else [float(sel[i])]
            out.append(sorted(r))
        return out

    # -- cached grid evaluation ------------------------------------------------

    def grid_matches(self) -> tuple[np.ndarray, np.ndarray]:
        """(F, u) on the quadrature cell centers of mu (cached)."""
        if self._f_cell is None:
            pts = self.mu.cell_centers
            chunks = []
            step = 65536
            for a in range(0, pts.shape[0], step):
                chunks.append(self.F(pts[a:a + step]))
            f = np.concatenate(chunks)
            with np.errstate(all="ignore"):
                u = np.asarray(self.s.value(pts, f)) - self.v(f)
            self._f_cell = f
            self._u_cell = u
        return self._f_cell, self._u_cell

    def pushforward_gap(self) -> float:
        """sup_y |mu{F <= y} - nu((-inf, y])| over the y grid."""
        f, _ = self.grid_matches()
        w = self.mu.cell_weight
        order = np.argsort(f, kind="stable")
        cum = np.cumsum(w[order])
        fs = f[order]
        idx = np.searchsorted(fs, self.y_grid, side="right")
        mass = np.concatenate([[0.0], cum])[idx]
        return float(np.max(np.abs(mass - self.nu.cdf(self.y_grid))))

    def stability_sample(self, n_pairs: int = 10000, seed: int = 0) -> float:
        """min of u(x) + v(y) - s(x, y) over a random pair sample."""
        rng = np.random.default_rng(seed)
        xs = self.mu.stratified_sample(int(math.isqrt(n_pairs)) + 1, rng)
        ys = self.nu.quantile(rng.random(int(math.isqrt(n_pairs)) + 1))
        ux = self.u(xs)
        vy = self.v(ys)
        tot = ux[:, None] + vy[None, :] - np.asarray(
            self.s.value(xs[:, None, :], ys[None, :]))
        return float(tot.min())


# ---------------------------------------------------------------------------
# Operation entry points
# ---------------------------------------------------------------------------

def h_value(s: Surplus, mu: DensityMeasure, nu: Measure1D, y: float, k: float) -> float:
    """mu[X_<=(y, k)] - nu((-inf, y)); nondecreasing in k."""
    return SublevelSolver(mu, s).mass_below(y, k) - nu.cdf(y)


def solve_split(s: Surplus, mu: DensityMeasure, nu: Measure1D, y: float,
                config: Optional[SolverConfig] = None) -> tuple[float, float]:
    """Threshold interval [k-, k+] splitting the population at y."""
    cfg = config or SolverConfig()
    sp = SublevelSolver(mu, s).solve_threshold(
        y, float(nu.cdf(y)), split_tol=cfg.split_tol, bisect_cap=cfg.bisect_cap)
    return sp.k_minus, sp.k_plus


def match_point(s: Surplus, mu: DensityMeasure, nu: Measure1D, x,
                scan_grid: int = 65, config: Optional[SolverConfig] = None) -> dict:
    """Solve the proportionate-splitting equation in y for one x.

    Scans a y grid for sign changes of
    psi(y) = mu[X_<=(y, s_y(x, y))] - nu((-inf, y]), then bisects each
    bracket. Returns all roots; `y` is the largest (the selection used at
    discontinuities). With no root the boundary type is assigned by sign.
    """
    cfg = config or SolverConfig()
    x = np.asarray(x, dtype=float)
    solver = SublevelSolver(mu, s)
    lo, hi = nu.support

    def psi(y: float) -> float:
        kxy = float(np.asarray(s.d_y(x[None, :], y))[0])
        return solver.mass_below(y, kxy) - float(nu.cdf(y))

    ys = np.linspace(lo, hi, scan_grid)
    vals = np.array([psi(t) for t in ys])
    roots = []
    for j in range(scan_grid - 1):
        if vals[j] == 0.0:
            roots.append(float(ys[j]))
            continue
        if vals[j] * vals[j + 1] < 0:
            a, b = ys[j], ys[j + 1]
            fa = vals[j]
            for _ in range(40):
                mid = 0.5 * (a + b)
                fm = psi(mid)
                if fa * fm <= 0:
                    b = mid
                else:
                    a, fa = mid, fm
            roots.append(0.5 * (a + b))
    if vals[-1] == 0.0:
        roots.append(float(ys[-1]))
    if not roots:
        y_sel = hi if vals[-1] > 0 else lo
        return {"y": float(y_sel), "roots": [], "boundary": True}
    return {"y": float(max(roots)), "roots": roots, "boundary": False}


def _solve_block(s: Surplus, mu: DensityMeasure, nu: Measure1D,
                 config: SolverConfig) -> tuple[SplitFunction, np.ndarray, list]:
    solver = SublevelSolver(mu, s)
    y_grid = np.linspace(nu.support[0], nu.support[1], config.y_grid)
    targets = np.asarray(nu.cdf(y_grid))

    def one(j: int) -> SplitPoint:
        return solver.solve_threshold(float(y_grid[j]), float(targets[j]),
                                      split_tol=config.split_tol,
                                      bisect_cap=config.bisect_cap)

    points = parallel_map(one, range(y_grid.size))
    k_minus = np.array([p.k_minus for p in points])
    k_plus = np.array([p.k_plus for p in points])
    resid = np.array([p.resid for p in points])
    split = SplitFunction(y_grid=y_grid, k_minus=k_minus, k_plus=k_plus, resid=resid)
    v = np.concatenate([[0.0], np.cumsum(0.5 * (k_plus[1:] + k_plus[:-1]) * np.diff(y_grid))])
    return split, v, points


def build_matching(s: Surplus, mu: DensityMeasure, nu: Measure1D,
                   config: Optional[SolverConfig] = None) -> MatchingSolution:
    """Full pipeline: split thresholds, payoffs, matching map, diagnostics.

    With config.blocks declared, the global model is first diagnosed (its
    verdict is reported for the whole model), then each block is solved on
    its renormalized restriction and the pieces are glued; v is made
    continuous across junctions. Without blocks, a not_nested verdict
    still returns the construction, flagged as heuristic.
    """
    cfg = config or SolverConfig()

    split, v, points = _solve_block(s, mu, nu, cfg)
    v = v + cfg.v0
    global_sol = MatchingSolution(s, mu, nu, split, v, cfg)
    global_sol.nested = nestedness_diagnostics(s, mu, nu, split, cfg, points)

    if not cfg.blocks:
        return global_sol

    specs = sorted(cfg.blocks, key=lambda b: b.y_lo)
    blocks = []
    for spec in specs:
        mu_b, wx = mu.restrict(spec.x_lo, spec.x_hi)
        nu_b, wy = nu.restrict(spec.y_lo, spec.y_hi)
        if abs(wx - wy) > 2 * mu.mass_tol + 1e-9:
            raise InfeasibleError(
                f"block {spec} carries mu mass {wx:.6g} but nu mass {wy:.6g}")
        sub_cfg = replace(cfg, blocks=())
        blocks.append(build_matching(s, mu_b, nu_b, sub_cfg))

    # Glue: concatenate block grids in y order and shift v for continuity.
    y_all, k_minus, k_plus, resid, v_all = [], [], [], [], []
    offset = cfg.v0
    for sol in blocks:
        y_all.append(sol.y_grid)
        k_minus.append(sol.split.k_minus)
        k_plus.append(sol.split.k_plus)
        resid.append(sol.split.resid)
        v_all.append(sol.v_grid + offset)
        offset = v_all[-1][-1]
    glued_split = SplitFunction(np.concatenate(y_all), np.concatenate(k_minus),
                                np.concatenate(k_plus), np.concatenate(resid))
    glued = MatchingSolution(s, mu, nu, glued_split, np.concatenate(v_all), cfg,
                             blocks=blocks, block_specs=specs)
    glued.nested = global_sol.nested
    glued.block_reports = [b.nested for b in blocks]
    return glued


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _diag_points(mu: DensityMeasure, cap: int) -> np.ndarray:
    pts = mu.cell_centers[mu.occupied_cell & ~mu.partial_cell]
    if pts.shape[0] <= cap:
        return pts
    stride = int(np.ceil(pts.shape[0] / cap))
    return pts[::stride]


def nestedness_diagnostics(s: Surplus, mu: DensityMeasure, nu: Measure1D,
                           split: SplitFunction,
                           config: Optional[SolverConfig] = None,
                           points: Optional[Sequence[SplitPoint]] = None
                           ) -> NestednessReport:
    """Sampled evidence for or against nestedness of (s, mu, nu).

    (a) monotone inclusion of sublevel sets along the y grid;
    (b) outward normal velocity k' - s_yy on iso-husband samples;
    (c) uniqueness of the proportionate-splitting root per sampled x;
    (d) transversality of iso-set endpoints at the domain boundary.
    """
    cfg = config or SolverConfig()
    y_grid, k = split.y_grid, split.k
    n = y_grid.size
    xs = _diag_points(mu, cfg.diag_sample)
    notes = []

    if points is None and mu.dim == 2:
        # Rebuild iso-husband samples from polyline vertices (strided).
        points = []
        stride = max(1, n // 33)
        for j in range(n):
            if j % stride or j in (0, n - 1):
                points.append(SplitPoint(float(y_grid[j]), k[j], k[j], 0.0,
                                         np.zeros((0, mu.dim))))
                continue
            lines = iso_husband_polylines(s, mu, float(y_grid[j]), float(k[j]))
            iso = (np.concatenate(lines) if lines else np.zeros((0, mu.dim)))
            points.append(SplitPoint(float(y_grid[j]), k[j], k[j], 0.0, iso))

    # One scan: inclusion violations with several strides + root counts.
    strides = tuple(st for st in cfg.diag_strides if st < n)
    window: dict[int, np.ndarray] = {}
    violations = []
    tol = cfg.inclusion_tol
    with np.errstate(all="ignore"):
        phi_prev = np.asarray(s.d_y(xs, y_grid[0]), dtype=float) - k[0]
    window[0] = phi_prev
    count = np.zeros(xs.shape[0], dtype=int)
    for j in range(1, n):
        with np.errstate(all="ignore"):
            phi = np.asarray(s.d_y(xs, y_grid[j]), dtype=float) - k[j]
        window[j] = phi
        for st in strides:
            j0 = j - st
            if j0 < 0 or j0 not in window:
                continue
            if nu.cdf(y_grid[j]) - nu.cdf(y_grid[j0]) <= 0:
                continue
            bad = (window[j0] <= -tol) & (phi >= tol)
            if bad.any() and len(violations) < 50:
                for i in np.nonzero(bad)[0][:5]:
                    violations.append((float(y_grid[j0]), float(y_grid[j]),
                                       tuple(xs[i])))
        count += ((phi_prev > 0) & (phi <= 0)) | ((phi_prev <= 0) & (phi > 0))
        phi_prev = phi
        old = j - max(strides) if strides else j
        window.pop(old - 1, None)

    multi = np.nonzero(count > 1)[0]
    failures = []
    if multi.size:
        sel, cnt, bnd, roots = _scan_matches(s, y_grid, k, xs[multi], collect_roots=True)
        for i in range(multi.size):
            if len(failures) >= 50:
                break
            failures.append((tuple(xs[multi[i]]), tuple(roots[i])))

    # Dynamic criterion on iso-husband samples (interior grid only; endpoint
    # divergence of k' is reported, not treated as failure).
    kprime = np.gradient(k, y_grid)
    dyn_min = np.inf
    if points is not None:
        for j in range(1, n - 1):
            iso = points[j].iso_points
            if iso.size == 0:
                continue
            with np.errstate(all="ignore"):
                syy = np.asarray(s.d_yy(iso, y_grid[j]), dtype=float)
            dyn_min = min(dyn_min, float((kprime[j] - syy).min()))
    if not np.isfinite(dyn_min):
        dyn_min = float("nan")
        notes.append("no iso-husband samples for the dynamic criterion")
    if n > 2 and (abs(kprime[0]) > 10 * np.median(np.abs(kprime[1:-1]) + 1e-30)
                  or abs(kprime[-1]) > 10 * np.median(np.abs(kprime[1:-1]) + 1e-30)):
        notes.append("k' diverges at a support endpoint (reported only)")

    # Transversality of iso-set endpoints against the domain boundary.
    # A few endmost grid points are skipped: iso sets there degenerate
    # with the support endpoint and alignment is a limit artifact, not an
    # interior tangency.
    flags = []
    if mu.dim == 2:
        stride = max(1, n // cfg.transversality_sample)
        tol_b = 2.0 * float(np.max(mu.cell_widths))
        skip = max(2, n // 64)
        for j in range(skip, n - skip, stride):
            for line in iso_husband_polylines(s, mu, float(y_grid[j]), float(k[j])):
                if line.shape[0] < 2:
                    continue
                for end, prev in ((line[0], line[1]), (line[-1], line[-2])):
                    cone = mu.domain.boundary_normal_cone(end, tol_b)
                    if not cone:
                        continue
                    grad = np.asarray(s.grad_x_dy(end[None, :], y_grid[j]))[0]
                    nrm = np.linalg.norm(grad)
                    out_dir = end - prev
                    if nrm == 0 or np.linalg.norm(out_dir) == 0:
                        continue
                    if _non_transversal(grad / nrm, cone,
                                        out_dir / np.linalg.norm(out_dir),
                                        cfg.angle_tol):
                        flags.append(float(y_grid[j]))
                        break
                if flags and flags[-1] == float(y_grid[j]):
                    break

    plateau = float(np.max(split.plateau_width()))
    if flags:
        notes.append("iso-set endpoints align with the boundary at flagged y")
    if violations or failures:
        verdict = "not_nested"
    elif np.isnan(dyn_min):
        verdict = "inconclusive"
    elif dyn_min < -cfg.dynamic_fail_tol:
        verdict = "not_nested"
    elif dyn_min < 0:
        verdict = "inconclusive"
    else:
        verdict = "nested"
    return NestednessReport(
        verdict=verdict,
        monotone_inclusion_violations=tuple(violations),
        dynamic_criterion_min=float(dyn_min),
        unique_splitting_failures=tuple(failures),
        transversality_flags=tuple(sorted(set(flags))),
        plateau_max=plateau,
        notes=tuple(notes),
    )


def _non_transversal(unit: np.ndarray, cone: list[np.ndarray],
                     outgoing: np.ndarray, angle_tol: float) -> bool:
    """Does the level-set normal land in the boundary's normal cone?

    On a face interior (one generator) within angle_tol means tangency.
    Near a corner, incidental proximity to a face the curve never crosses
    must not count, so only the face actually being crossed (largest
    alignment with the outgoing direction) gets the angle test; genuine
    corner hits are caught by strict containment in the spanned sector.
    """

    def angle_to(g):
        return min(math.acos(np.clip(np.dot(sv * unit, g), -1, 1))
                   for sv in (1.0, -1.0))

    if len(cone) == 1:
        return angle_to(cone[0]) <= angle_tol
    crossed = max(cone, key=lambda g: float(np.dot(outgoing, g)))
    if angle_to(crossed) <= angle_tol:
        return True
    for i in range(len(cone)):
        for j in range(i + 1, len(cone)):
            g1, g2 = cone[i], cone[j]
            det = g1[0] * g2[1] - g1[1] * g2[0]
            if abs(det) < 1e-12:
                continue
            for sv in (1.0, -1.0):
                v = sv * unit
                a = (v[0] * g2[1] - v[1] * g2[0]) / det
                b = (g1[0] * v[1] - g1[1] * v[0]) / det
                if a >= 1e-9 and b >= 1e-9:
                    return True
    return False


# ---------------------------------------------------------------------------
# Iso-husband sets (marching squares on the coarse grid)
# ---------------------------------------------------------------------------

def iso_husband_polylines(s: Surplus, mu: DensityMeasure, y: float,
                          k: float) -> list[np.ndarray]:
    """Ordered polylines of {x : s_y(x, y) = k} inside the domain (m = 2)."""
    if mu.dim != 2:
        raise ConfigurationError("polyline extraction requires m = 2")
    ax0, ax1 = mu.cell_axes
    n0, n1 = ax0.size, ax1.size
    pts = mu.cell_centers.reshape(n0, n1, 2)
    with np.errstate(all="ignore"):
        phi = np.asarray(s.d_y(pts, y), dtype=float) - k
    inside = mu.occupied_cell.reshape(n0, n1) & ~mu.partial_cell.reshape(n0, n1)
    neg = phi < 0

    crossings: dict[tuple, np.ndarray] = {}

    def edge_point(kind, i, j):
        key = (kind, i, j)
        if key in crossings:
            return key
        if kind == "h":
            p0, p1 = phi[i, j], phi[i + 1, j]
            a = pts[i, j]
            b = pts[i + 1, j]
        else:
            p0, p1 = phi[i, j], phi[i, j + 1]
            a = pts[i, j]
            b = pts[i, j + 1]
        t = p0 / (p0 - p1)
        crossings[key] = a + np.clip(t, 0.0, 1.0) * (b - a)
        return key

    hcross = (neg[:-1, :] != neg[1:, :]) & inside[:-1, :] & inside[1:, :]
    vcross = (neg[:, :-1] != neg[:, 1:]) & inside[:, :-1] & inside[:, 1:]

    segments = []
    cells = np.nonzero(hcross[:, :-1] | hcross[:, 1:] | vcross[:-1, :] | vcross[1:, :])[0:2]
    for i, j in zip(*cells):
        edges = []
        if hcross[i, j]:
            edges.append(edge_point("h", i, j))
        if hcross[i, j + 1]:
            edges.append(edge_point("h", i, j + 1))
        if vcross[i, j]:
            edges.append(edge_point("v", i, j))
        if vcross[i + 1, j]:
            edges.append(edge_point("v", i + 1, j))
        if len(edges) == 2:
            segments.append((edges[0], edges[1]))
        elif len(edges) == 4:
            # Saddle: pair by the sign at the cell average.
            mid = 0.25 * (phi[i, j] + phi[i + 1, j] + phi[i, j + 1] + phi[i + 1, j + 1])
            if (mid < 0) == bool(neg[i, j]):
                segments.append((edges[0], edges[3]))
                segments.append((edges[1], edges[2]))
            else:
                segments.append((edges[0], edges[2]))
                segments.append((edges[1], edges[3]))

    adj: dict[tuple, list[tuple]] = {}
    for a, b in segments:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)

    seen = set()
    lines = []
    starts = [n for n, nb in adj.items() if len(nb) == 1] + list(adj)
    for start in starts:
        if start in seen:
            continue
        path = [start]
        seen.add(start)
        cur = start
        while True:
            nxt = [n for n in adj[cur] if n not in seen]
            if not nxt:
                break
            cur = nxt[0]
            seen.add(cur)
            path.append(cur)
        if len(path) >= 2:
            lines.append(np.array([crossings[p] for p in path]))
    lines.sort(key=lambda L: -L.shape[0])
    return lines


def iso_husband_set(solution: MatchingSolution, y: float) -> list[np.ndarray]:
    """Iso-husband set of `y` under the computed matching (polylines, m=2)."""
    k = float(solution.split.k_at(y))
    if solution.blocks:
        for spec, sol in zip(solution.block_specs, solution.blocks):
            if spec.y_lo - 1e-12 <= y <= spec.y_hi + 1e-12:
                return iso_husband_polylines(sol.s, sol.mu, y, float(sol.split.k_at(y)))
    return iso_husband_polylines(solution.s, solution.mu, y, k)


# ---------------------------------------------------------------------------
# Envelope and compatibility checks
# ---------------------------------------------------------------------------

def _interior_mask(mu: DensityMeasure, x: np.ndarray, h: float) -> np.ndarray:
    ok = np.ones(x.shape[0], dtype=bool)
    for d in range(x.shape[1]):
        for sgn in (-1.0, 1.0):
            shifted = x.copy()
            shifted[:, d] += sgn * h
            ok &= np.asarray(mu.domain.contains(shifted))
    return ok


def envelope_check(solution: MatchingSolution, x_samples,
                   h: float = 1e-3, jump_tol: float = 0.05) -> dict:
    """Compare finite-difference grad u against D_x s(x, F(x)).

    Samples whose stencil leaves the domain or crosses a jump of F larger
    than jump_tol are excluded (F may be discontinuous off the nested
    regime; u is not differentiable there).
    """
    x = np.atleast_2d(np.asarray(x_samples, dtype=float))
    keep = _interior_mask(solution.mu, x, h)
    x = x[keep]
    m = x.shape[1]
    grads = np.empty((x.shape[0], m))
    jump = np.zeros(x.shape[0], dtype=bool)
    for d in range(m):
        xp = x.copy()
        xm = x.copy()
        xp[:, d] += h
        xm[:, d] -= h
        up, um = solution.u(xp), solution.u(xm)
        fp, fm = solution.F(xp), solution.F(xm)
        jump |= np.abs(fp - fm) > jump_tol
        grads[:, d] = (up - um) / (2 * h)
    used = ~jump
    ref = np.asarray(solution.s.grad_x(x[used], solution.F(x[used])))
    err = np.abs(grads[used] - ref) / np.maximum(1.0, np.abs(ref))
    return {
        "max_rel_error": float(err.max()) if err.size else float("nan"),
        "n_used": int(used.sum()),
        "n_excluded": int((~keep).sum() + jump.sum()),
    }


def compatibility_check(solution: MatchingSolution, x_samples,
                        h: float = 2e-2, jump_tol: float = 0.05,
                        interior_margin: float = 0.05,
                        partner_margin: float = 0.0) -> dict:
    """PDE residuals of the matching map at sample points (m = 2).

    Checks s_{x1 y} F_{x2} = s_{x2 y} F_{x1} and the map-gradient identity
    (k'(F) - s_yy) DF = D_x s_y, both by central differences of F. Samples
    closer than interior_margin to the domain boundary, or matched within
    partner_margin of the nu-support endpoints (where k' may diverge), are
    excluded.
    """
    x = np.atleast_2d(np.asarray(x_samples, dtype=float))
    if x.shape[1] != 2:
        raise ConfigurationError("compatibility check requires m = 2")
    keep = _interior_mask(solution.mu, x, max(2 * h, interior_margin))
    x = x[keep]
    if partner_margin > 0:
        fy0 = solution.F(x)
        lo, hi = solution.nu.support
        inner = (fy0 >= lo + partner_margin) & (fy0 <= hi - partner_margin)
        x = x[inner]
    fy = solution.F(x)
    gxy = np.asarray(solution.s.grad_x_dy(x, fy))
    syy = np.asarray(solution.s.d_yy(x, fy))
    delta = 2.0 * float(np.mean(np.diff(solution.y_grid)))
    kp = (solution.split.k_at(fy + delta) - solution.split.k_at(fy - delta)) / (2 * delta)

    # F carries solve jitter (favoring a large step) and curvature
    # (favoring a small one); evaluate two stencils, keep the better fit.
    cross_best = np.full(x.shape[0], np.inf)
    grad_best = np.full(x.shape[0], np.inf)
    jump = np.zeros(x.shape[0], dtype=bool)
    for step in (h, h / 2):
        df = np.empty((x.shape[0], 2))
        for d in range(2):
            shifts = {}
            for c in (-2, -1, 1, 2):
                xx = x.copy()
                xx[:, d] += c * step
                shifts[c] = solution.F(xx)
            jump |= np.abs(shifts[1] - shifts[-1]) > jump_tol
            df[:, d] = (8 * (shifts[1] - shifts[-1])
                        - (shifts[2] - shifts[-2])) / (12 * step)
        cross = np.abs(gxy[:, 0] * df[:, 1] - gxy[:, 1] * df[:, 0])
        grad = np.linalg.norm((kp - syy)[:, None] * df - gxy, axis=1)
        cross_best = np.minimum(cross_best, cross)
        grad_best = np.minimum(grad_best, grad)
    used = ~jump
    return {
        "max_cross_residual": float(cross_best[used].max()) if used.any() else float("nan"),
        "max_gradient_residual": float(grad_best[used].max()) if used.any() else float("nan"),
        "n_used": int(used.sum()),
        "n_excluded": int((~keep).sum() + jump.sum()),
    }


# ---------------------------------------------------------------------------
# Local matching of a prescribed couple
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalMatch:
    x0: np.ndarray
    y0: float
    radius: float
    v_curvature: float          # the constant v''
    v_slope: float              # v'(y0) = s_y(x0, y0)
    F: Callable
    mu_local: DensityMeasure
    nu_local: Measure1D

    def v(self, y):
        d = np.asarray(y) - self.y0
        return self.v_slope * d + 0.5 * self.v_curvature * d * d

    def v_prime(self, y):
        return self.v_slope + self.v_curvature * (np.asarray(y) - self.y0)


def local_match_construction(s: Surplus, x0, y0: float, radius: float,
                             resolution: int = 96) -> LocalMatch:
    """Quadratic-payoff construction matching the couple (x0, y0) exactly.

    v is quadratic with curvature above max s_yy on the neighborhood and
    v'(y0) = s_y(x0, y0); F solves s_y(x, y) = v'(y), which is monotone in
    y by the curvature margin, and nu is the push-forward of the uniform
    ball through F.
    """
    x0 = np.asarray(x0, dtype=float)
    base = float(np.asarray(s.d_y(x0[None, :], y0))[0])

    for attempt in range(5):
        r = radius * 0.5 ** attempt
        ball = DensityMeasure(
            domain=_ball_domain(x0, r), resolution=resolution, subsample=2)
        probe = ball.cell_centers[ball.occupied_cell]
        y_probe = np.linspace(y0 - r, y0 + r, 9)
        syy_max = max(float(np.asarray(s.d_yy(probe, t)).max()) for t in y_probe)
        c = syy_max + max(1.0, abs(syy_max))
        gap = c - syy_max

        def F(x, c=c, gap=gap, r=r):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            y = np.full(x.shape[0], y0, dtype=float)
            for _ in range(60):
                g = np.asarray(s.d_y(x, y)) - base - c * (y - y0)
                gp = np.asarray(s.d_yy(x, y)) - c
                step = g / gp
                y = y - step
                if np.max(np.abs(step)) < 1e-13:
                    break
            return y

        f_probe = F(probe)
        res = np.abs(np.asarray(s.d_y(probe, f_probe)) - (base + c * (f_probe - y0)))
        if np.max(res) < 1e-9:
            lo, hi = float(f_probe.min()), float(f_probe.max())
            pad = 1e-6 * max(1.0, hi - lo)
            grid = np.linspace(lo - pad, hi + pad, 257)
            solver = SublevelSolver(ball, s)
            slope = base + c * (grid - y0)
            cdf = np.array([solver.mass_below(t, kk) for t, kk in zip(grid, slope)])
            cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
            cdf[0], cdf[-1] = 0.0, 1.0
            dens = np.gradient(cdf, grid)
            nu_local = Measure1D(grid[0], grid[-1], grid, cdf, dens)
            return LocalMatch(x0=x0, y0=float(y0), radius=r, v_curvature=c,
                              v_slope=base, F=F, mu_local=ball, nu_local=nu_local)
    raise InfeasibleError("local match construction failed to converge")


def _ball_domain(center: np.ndarray, radius: float):
    from .geometry import Domain
    return Domain.disk_sector(center, radius, orthants=None)
