"""Exact discrete optimal-transport oracle.

The continuum solver is checked against balanced equal-mass assignment
problems: N atoms sampled from each side, the surplus matrix filled, the
linear assignment problem solved exactly, and dual payoffs recovered so
that every claim (marginals, stability, zero duality gap, s-monotonicity
of the support, purity) carries a certificate.

Dual potentials: given the optimal permutation, feasibility of (u, v) is
a system of difference constraints between the y-side potentials, with no
positive cycles precisely because the assignment is optimal. A vectorized
Bellman-Ford longest-path pass therefore terminates and yields v; then
u_i = max_j (s_ij - v_j) is attained at the assigned partner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError, OracleMismatchError
from .geometry import DensityMeasure, Measure1D
from .surplus import Surplus, cross_difference

LP_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteProblem:
    x_atoms: np.ndarray          # (N, m), each of mass 1/N
    y_atoms: np.ndarray          # (N,), each of mass 1/N
    surplus_matrix: np.ndarray   # (N, N)

    def __post_init__(self):
        n = self.x_atoms.shape[0]
        if self.y_atoms.shape[0] != n or self.surplus_matrix.shape != (n, n):
            raise ConfigurationError("atom counts must balance")
        if not np.all(np.isfinite(self.surplus_matrix)):
            raise ConfigurationError("surplus matrix must be finite")

    @property
    def n(self) -> int:
        return self.x_atoms.shape[0]


@dataclass(frozen=True)
class DiscreteCoupling:
    problem: DiscreteProblem
    assignment: np.ndarray       # partner index per x-atom
    total_surplus: float         # mean surplus per atom pair
    dual_u: np.ndarray
    dual_v: np.ndarray
    duality_gap: float
    feasibility_violation: float

    def support_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.problem.x_atoms, self.problem.y_atoms[self.assignment]


def sample_atoms(mu: DensityMeasure, nu: Measure1D, n: int, seed: int,
                 s: Optional[Surplus] = None) -> DiscreteProblem:
    """Balanced atoms: stratified draws from mu, nu-quantiles (j - 1/2)/N."""
    if n < 1:
        raise ConfigurationError("need at least one atom")
    rng = np.random.default_rng(seed)
    x = mu.stratified_sample(n, rng)
    q = (np.arange(n) + 0.5) / n
    y = np.asarray(nu.quantile(q), dtype=float)
    if s is None:
        mat = np.zeros((n, n))
    else:
        mat = np.asarray(s.value(x[:, None, :], y[None, :]), dtype=float)
    return DiscreteProblem(x_atoms=x, y_atoms=y, surplus_matrix=mat)


def _dual_potentials(mat: np.ndarray, col: np.ndarray,
                     max_iters: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Potentials certifying optimality of the assignment i -> col[i]."""
    n = mat.shape[0]
    inv = np.empty(n, dtype=int)
    inv[col] = np.arange(n)
    # a[j', j] = s(i, j) - s(i, j') for the i matched to j'; feasibility of v
    # requires v[j] >= v[j'] + a[j', j].
    a = mat[inv, :] - np.diag(mat[inv, :])[:, None]
    v = np.zeros(n)
    cap = max_iters or (n + 1)
    for _ in range(cap):
        cand = (v[:, None] + a).max(axis=0)
        new = np.maximum(v, cand)
        if np.max(new - v) <= 1e-13:
            v = new
            break
        v = new
    u = mat[np.arange(n), col] - v[col]
    return u, v


def solve_exact(problem: DiscreteProblem) -> DiscreteCoupling:
    """Exact optimal assignment with dual certificates.

    Ties between optimal assignments are resolved by the solver
    deterministically (lowest row index first); the duals certify whatever
    assignment is returned.
    """
    mat = problem.surplus_matrix
    row, col = linear_sum_assignment(mat, maximize=True)
    order = np.argsort(row)
    col = col[order]
    total = float(mat[np.arange(problem.n), col].mean())
    u, v = _dual_potentials(mat, col)
    viol = float(np.max(mat - u[:, None] - v[None, :]))
    gap = float(u.mean() + v.mean() - total)
    return DiscreteCoupling(problem=problem, assignment=col, total_surplus=total,
                            dual_u=u, dual_v=v, duality_gap=gap,
                            feasibility_violation=max(viol, 0.0))


def check_s_monotonicity(coupling: DiscreteCoupling,
                         s: Optional[Surplus] = None,
                         max_pairs: int = 4_000_000) -> dict:
    """Minimum cross difference over support pairs.

    With s supplied the cross difference is evaluated exactly at the atom
    coordinates; otherwise it is read off the surplus matrix (both sides
    at atom level). Optimal couplings must come out >= -LP_TOL.
    """
    prob = coupling.problem
    n = prob.n
    col = coupling.assignment
    if n * n > max_pairs:
        rng = np.random.default_rng(0)
        ii = rng.integers(0, n, size=int(np.sqrt(max_pairs)))
        jj = rng.integers(0, n, size=int(np.sqrt(max_pairs)))
    else:
        ii = np.arange(n)
        jj = np.arange(n)
    if s is not None:
        xi = prob.x_atoms[ii]
        yi = prob.y_atoms[col[ii]]
        xj = prob.x_atoms[jj]
        yj = prob.y_atoms[col[jj]]
        delta = np.asarray(cross_difference(
            s, xi[:, None, :], yi[:, None], xj[None, :, :], yj[None, :]))
    else:
        mat = prob.surplus_matrix
        s_own_i = mat[ii, col[ii]]
        s_own_j = mat[jj, col[jj]]
        delta = (s_own_i[:, None] + s_own_j[None, :]
                 - mat[np.ix_(ii, col[jj])]
                 - mat[np.ix_(jj, col[ii])].T)
    return {"min_delta": float(delta.min()), "pairs": int(delta.size)}


def purity_report(coupling: DiscreteCoupling, value_tol: float = 0.0) -> dict:
    """Partner multiplicity per x-atom.

    Equal-mass assignments are permutations, so the count is 1 per atom
    unless the solve produced something else (reported, never asserted).
    Also reports how many distinct y-values the partners take, which
    collapses when nu is concentrated.
    """
    col = coupling.assignment
    rows = np.arange(col.size)
    partners_per_x = np.bincount(rows, minlength=col.size)
    y_vals = coupling.problem.y_atoms[col]
    if value_tol > 0:
        distinct = np.unique(np.round(y_vals / value_tol)).size
    else:
        distinct = np.unique(y_vals).size
    return {
        "max_partners_per_x": int(partners_per_x.max()),
        "split_x_atoms": np.nonzero(partners_per_x > 1)[0].tolist(),
        "distinct_partner_values": int(distinct),
    }


def compare_to_continuum(coupling: DiscreteCoupling, solution) -> dict:
    """Atom-restricted continuum solution vs the exact discrete optimum."""
    prob = coupling.problem
    fx = solution.F(prob.x_atoms)
    with np.errstate(all="ignore"):
        cont = float(np.asarray(solution.s.value(prob.x_atoms, fx)).mean())
    lp = coupling.total_surplus
    partner = prob.y_atoms[coupling.assignment]
    rmse = float(np.sqrt(np.mean((partner - fx) ** 2)))
    return {
        "surplus_ratio": cont / lp if lp != 0 else float("inf"),
        "lp_mean_surplus": lp,
        "continuum_mean_surplus": cont,
        "matched_y_rmse": rmse,
    }


def require_agreement(comparison: dict, coupling: DiscreteCoupling,
                      ratio_tol: float = 5e-3, rmse_tol: float = 5e-2,
                      gap_tol: float = LP_TOL) -> None:
    """Raise OracleMismatchError when the continuum run fails the oracle gate."""
    if coupling.duality_gap > gap_tol * max(1.0, abs(coupling.total_surplus)):
        raise OracleMismatchError(
            f"LP duality gap {coupling.duality_gap:.3e} exceeds tolerance")
    if comparison["surplus_ratio"] < 1.0 - ratio_tol:
        raise OracleMismatchError(
            f"continuum surplus ratio {comparison['surplus_ratio']:.6f} "
            f"below 1 - {ratio_tol}")
    if comparison["matched_y_rmse"] > rmse_tol:
        raise OracleMismatchError(
            f"matched-partner RMSE {comparison['matched_y_rmse']:.4f} "
            f"exceeds {rmse_tol}")
