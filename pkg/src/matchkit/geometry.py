"""Type spaces and population measures.

The multidimensional side lives on a bounded region of R^m (a box, a disk
sector, or a union of boxes) carrying an absolutely continuous probability
measure; the one-dimensional side is an interval with a density, CDF and
quantile function. Mass queries over sublevel regions are answered by a
fixed tensor-product quadrature grid with per-cell subsampling near the
indicator boundary, which is where all the error concentrates when the
indicator is a sublevel set of a smooth function.

All objects are immutable after construction and every query is pure, so
they can be shared freely between worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

# Below this many cells per axis the boundary-cell error model breaks down.
MIN_CELLS_PER_AXIS = 8

DEFAULT_RESOLUTION = {1: 4096, 2: 512, 3: 64}
DEFAULT_SUBSAMPLE = {1: 8, 2: 4, 3: 2}

MASS_TOL = 1e-4


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """A bounded region of R^m with a vectorized membership test.

    kind is one of "box", "disk_sector", "box_union". Use the classmethod
    constructors; they validate the geometric invariants.
    """

    kind: str
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    orthants: Optional[tuple] = None
    boxes: tuple = ()

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "Domain":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ConfigurationError(f"box requires lo < hi componentwise, got {lo} vs {hi}")
        return cls(kind="box", dim=lo.size, lo=lo, hi=hi)

    @classmethod
    def disk_sector(cls, center: Sequence[float], radius: float,
                    orthants: Optional[Sequence[Optional[int]]] = None) -> "Domain":
        """Ball around `center` intersected with half-spaces.

        orthants[d] = +1 keeps x_d >= center_d, -1 keeps x_d <= center_d,
        None leaves axis d unconstrained. The quarter disk of the screening
        examples is orthants=(+1, +1) at the origin; a full ball is
        orthants=None.
        """
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise ConfigurationError(f"disk_sector requires radius > 0, got {radius}")
        if orthants is None:
            orthants = (None,) * center.size
        orthants = tuple(orthants)
        if len(orthants) != center.size:
            raise ConfigurationError("orthant flags must match the center dimension")
        for f in orthants:
            if f not in (None, 1, -1):
                raise ConfigurationError(f"orthant flag must be +1, -1 or None, got {f!r}")
        return cls(kind="disk_sector", dim=center.size, center=center,
                   radius=float(radius), orthants=orthants)

    @classmethod
    def box_union(cls, boxes: Sequence["Domain"]) -> "Domain":
        boxes = tuple(boxes)
        if not boxes:
            raise ConfigurationError("box_union requires at least one box")
        if any(b.kind != "box" for b in boxes):
            raise ConfigurationError("box_union members must be boxes")
        dim = boxes[0].dim
        if any(b.dim != dim for b in boxes):
            raise ConfigurationError("box_union members must share one dimension")
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                if np.all(np.minimum(a.hi, b.hi) > np.maximum(a.lo, b.lo)):
                    raise ConfigurationError(
                        f"box_union members {i} and {j} have overlapping interiors")
        return cls(kind="box_union", dim=dim, boxes=boxes)

    # -- queries ------------------------------------------------------------

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership of points, shape (..., dim) -> bool (...)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        if self.kind == "disk_sector":
            d = x - self.center
            ok = np.einsum("...d,...d->...", d, d) <= self.radius ** 2
            for ax, f in enumerate(self.orthants):
                if f == 1:
                    ok &= d[..., ax] >= 0
                elif f == -1:
                    ok &= d[..., ax] <= 0
            return ok
        out = np.zeros(x.shape[:-1], dtype=bool)
        for b in self.boxes:
            out |= b.contains(x)
        return out

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return self.lo.copy(), self.hi.copy()
        if self.kind == "disk_sector":
            lo = self.center - self.radius
            hi = self.center + self.radius
            for ax, f in enumerate(self.orthants):
                if f == 1:
                    lo[ax] = self.center[ax]
                elif f == -1:
                    hi[ax] = self.center[ax]
            return lo, hi
        los = np.array([b.lo for b in self.boxes])
        his = np.array([b.hi for b in self.boxes])
        return los.min(axis=0), his.max(axis=0)

    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(self.hi - self.lo))
        if self.kind == "disk_sector":
            m, r = self.dim, self.radius
            full = {1: 2 * r, 2: np.pi * r ** 2, 3: 4 / 3 * np.pi * r ** 3}[m]
            cuts = sum(1 for f in self.orthants if f is not None)
            return float(full / 2 ** cuts)
        return float(sum(b.volume() for b in self.boxes))

    def boundary_normal_cone(self, x: np.ndarray, tol: float) -> list[np.ndarray]:
        """Outward unit normals of the boundary features within `tol` of x.

        Returns the generators of the generalized normal cone at x: one
        normal on a face interior, two at a corner, empty if x is not close
        to the boundary. Used by the transversality diagnostic.
        """
        x = np.asarray(x, dtype=float)
        normals: list[np.ndarray] = []
        if self.kind == "box":
            for ax in range(self.dim):
                e = np.zeros(self.dim)
                if abs(x[ax] - self.lo[ax]) <= tol:
                    e[ax] = -1.0
                    normals.append(e)
                elif abs(x[ax] - self.hi[ax]) <= tol:
                    e[ax] = 1.0
                    normals.append(e)
            return normals
        if self.kind == "disk_sector":
            d = x - self.center
            if abs(np.linalg.norm(d) - self.radius) <= tol and np.linalg.norm(d) > 0:
                normals.append(d / np.linalg.norm(d))
            for ax, f in enumerate(self.orthants):
                if f is not None and abs(d[ax]) <= tol:
                    e = np.zeros(self.dim)
                    e[ax] = -float(f)
                    normals.append(e)
            return normals
        # Union: a member face contributes only where it is exterior.
        for b in self.boxes:
            near = np.all((x >= b.lo - tol) & (x <= b.hi + tol))
            if not near:
                continue
            for n in b.boundary_normal_cone(x, tol):
                probe = x + 3.0 * tol * n
                if not self.contains(probe):
                    normals.append(n)
        # Deduplicate collinear generators.
        out: list[np.ndarray] = []
        for n in normals:
            if not any(np.allclose(n, m) for m in out):
                out.append(n)
        return out


# ---------------------------------------------------------------------------
# Quadrature-backed measures on X
# ---------------------------------------------------------------------------

def _subdivide(lo: float, hi: float, n: int, sub: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell centers (n,) and subcell centers (n, sub) of a uniform split."""
    edges = np.linspace(lo, hi, n + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w = (hi - lo) / n
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    subcenters = centers[:, None] + offs[None, :] * w
    return centers, subcenters


class DensityMeasure:
    """Absolutely continuous probability measure on a Domain.

    density=None means uniform. A user-supplied density is any nonnegative
    vectorized callable on points of shape (..., m); it is normalized
    numerically on the quadrature grid at construction.

    The quadrature is a fixed tensor grid (`resolution` cells per axis)
    refined `subsample`-fold per axis; subcell weights are precomputed once
    so that repeated sublevel-mass queries only pay for evaluating the
    level function.
    """

    def __init__(self, domain: Domain, density: Optional[Callable] = None,
                 resolution: Optional[int] = None, subsample: Optional[int] = None,
                 mass_tol: float = MASS_TOL):
        self.domain = domain
        m = domain.dim
        if m not in (1, 2, 3):
            raise ConfigurationError(f"only dimensions 1..3 are supported, got {m}")
        res = resolution if resolution is not None else DEFAULT_RESOLUTION[m]
        sub = subsample if subsample is not None else DEFAULT_SUBSAMPLE[m]
        if res < MIN_CELLS_PER_AXIS:
            raise ConfigurationError(
                f"resolution {res} is below the minimum of {MIN_CELLS_PER_AXIS} cells per axis")
        if sub < 1:
            raise ConfigurationError("subsample must be >= 1")
        self.resolution = int(res)
        self.subsample = int(sub)
        self.mass_tol = float(mass_tol)
        self._uniform = density is None
        self._orig_density = density

        lo, hi = domain.bounding_box()
        self.bbox_lo, self.bbox_hi = lo, hi
        self.cell_axes = []
        self.sub_axes = []          # per axis, shape (res, sub)
        for d in range(m):
            c, s = _subdivide(lo[d], hi[d], res, sub)
            self.cell_axes.append(c)
            self.sub_axes.append(s)
        self.cell_widths = (hi - lo) / res
        subvol = float(np.prod(self.cell_widths)) / sub ** m

        # Dense subpoint pass: membership and density, then normalize.
        flat_axes = [s.reshape(-1) for s in self.sub_axes]
        mesh = np.meshgrid(*flat_axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)                      # (res*sub,)*m + (m,)
        inside = domain.contains(pts)
        if density is None:
            vals = np.where(inside, 1.0 / domain.volume(), 0.0)
        else:
            vals = np.asarray(density(pts), dtype=float) * inside
        if np.any(vals < 0):
            raise ConfigurationError("density must be nonnegative on the domain")
        w = vals * subvol
        raw = float(w.sum())
        if raw <= 0:
            raise ConfigurationError("density integrates to zero over the domain")
        self.normalization = raw
        w /= raw

        # Reorganize to (ncells, sub^m) for cheap gathers of boundary cells.
        shape = []
        for _ in range(m):
            shape.extend([res, sub])
        w = w.reshape(shape)
        perm = list(range(0, 2 * m, 2)) + list(range(1, 2 * m, 2))
        w = np.transpose(w, perm)
        self.ncells = res ** m
        self.w_sub_by_cell = np.ascontiguousarray(w.reshape(self.ncells, sub ** m))
        self.cell_weight = self.w_sub_by_cell.sum(axis=1)  # flat (ncells,)
        counts = (self.w_sub_by_cell > 0).sum(axis=1)
        self.partial_cell = (counts > 0) & (counts < sub ** m)
        self.occupied_cell = counts > 0

        mesh_c = np.meshgrid(*self.cell_axes, indexing="ij")
        self.cell_centers = np.stack(mesh_c, axis=-1).reshape(self.ncells, m)

        if self._uniform and abs(raw - 1.0) > 50 * mass_tol:
            raise ConfigurationError(
                f"quadrature volume estimate {raw:.6g} disagrees with the analytic volume")

    # -- internals ----------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.domain.dim

    def _cell_multi_index(self, cells: np.ndarray) -> tuple:
        return np.unravel_index(cells, (self.resolution,) * self.dim)

    def sub_points(self, cells: np.ndarray) -> np.ndarray:
        """Subcell centers of the given flat cell indices, (k, sub^m, m)."""
        idx = self._cell_multi_index(cells)
        sub = self.subsample
        m = self.dim
        per_axis = [self.sub_axes[d][idx[d]] for d in range(m)]  # each (k, sub)
        k = cells.size
        out = np.empty((k, sub ** m, m))
        for d in range(m):
            shape = [k] + [1] * m
            shape[1 + d] = sub
            a = per_axis[d].reshape(k, *([1] * d), sub, *([1] * (m - 1 - d)))
            b = np.broadcast_to(a, (k,) + (sub,) * m)
            out[:, :, d] = b.reshape(k, sub ** m)
        return out

    # -- public queries -------------------------------------------------------

    def mass_of_region(self, indicator: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of the density over {x : indicator(x)}.

        Cells whose neighbors disagree about the indicator, and cells that
        straddle the domain boundary, are resolved at subcell resolution;
        everything else is counted wholesale.
        """
        shape = (self.resolution,) * self.dim
        ind_c = np.asarray(indicator(self.cell_centers.reshape(shape + (self.dim,))),
                           dtype=bool)
        border = np.zeros(shape, dtype=bool)
        for ax in range(self.dim):
            d = ind_c != np.roll(ind_c, 1, axis=ax)
            d_slice = [slice(None)] * self.dim
            d_slice[ax] = 0
            d[tuple(d_slice)] = False
            border |= d
            border |= np.roll(d, -1, axis=ax)
        border = border.reshape(-1) | self.partial_cell
        border &= self.occupied_cell

        full = ~border & ind_c.reshape(-1)
        mass = float(self.cell_weight[full].sum())
        cells = np.nonzero(border)[0]
        if cells.size:
            pts = self.sub_points(cells)
            sub_ind = np.asarray(indicator(pts), dtype=bool)
            mass += float((self.w_sub_by_cell[cells] * sub_ind).sum())
        return mass

    def marginal(self, axis: int) -> "Measure1D":
        """Push-forward of the measure through the coordinate projection."""
        sub = self.subsample
        m = self.dim
        w = self.w_sub_by_cell.reshape((self.resolution,) * m + (sub,) * m)
        keep = (axis, m + axis)
        other = [d for d in range(2 * m) if d not in keep]
        col = w.sum(axis=tuple(other)).reshape(-1)         # mass per sub-slab
        knots = self.sub_axes[axis].reshape(-1)
        return Measure1D.from_bin_masses(knots, col,
                                         float(self.bbox_lo[axis]),
                                         float(self.bbox_hi[axis]))

    def restrict(self, lo: Sequence[float], hi: Sequence[float]) -> tuple["DensityMeasure", float]:
        """Renormalized restriction to a box; also returns the restricted mass."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        mass = self.mass_of_region(lambda x: np.all((x >= lo) & (x <= hi), axis=-1))
        dom = self.domain
        if dom.kind == "box":
            clipped = Domain.box(np.maximum(dom.lo, lo), np.minimum(dom.hi, hi))
        elif dom.kind == "box_union":
            kept = []
            for b in dom.boxes:
                l2, h2 = np.maximum(b.lo, lo), np.minimum(b.hi, hi)
                if np.all(l2 < h2):
                    kept.append(Domain.box(l2, h2))
            if not kept:
                raise ConfigurationError("restriction box misses the domain")
            clipped = kept[0] if len(kept) == 1 else Domain.box_union(kept)
        else:
            raise ConfigurationError(f"restrict is not supported for kind {dom.kind!r}")
        out = DensityMeasure(clipped, self._orig_density, resolution=self.resolution,
                             subsample=self.subsample, mass_tol=self.mass_tol)
        return out, float(mass)

    def stratified_sample(self, n: int, rng: np.random.Generator,
                          strata_per_axis: int = 32) -> np.ndarray:
        """n points distributed like the measure, stratified over a coarse grid.

        Counts per stratum are the largest-remainder apportionment of the
        stratum masses; points within a stratum come from rejection against
        the local density. Deterministic given the generator state.
        """
        m = self.dim
        res = self.resolution
        k = max(1, min(strata_per_axis, res))
        while res % k:
            k -= 1
        block = res // k
        w = self.cell_weight.reshape((res,) * m)
        for ax in range(m):
            w = w.reshape(w.shape[:ax] + (k, block) + w.shape[ax + 1:]).sum(axis=ax + 1)
        w = w.reshape(-1)
        quota = n * w
        counts = np.floor(quota).astype(int)
        rem = quota - counts
        short = n - counts.sum()
        if short > 0:
            # Random tie-break: equal remainders must not starve a fixed
            # corner of the domain (deterministic given the generator).
            order = np.lexsort((rng.random(rem.size), -rem))
            counts[order[:short]] += 1

        lo, hi = self.bbox_lo, self.bbox_hi
        widths = (hi - lo) / k
        pts = np.empty((n, m))
        pos = 0
        dens_max = self._stratum_density_max(k, block)
        for s in np.nonzero(counts)[0]:
            c = counts[s]
            sidx = np.unravel_index(s, (k,) * m)
            slo = lo + np.array(sidx) * widths
            got = 0
            while got < c:
                cand = slo + rng.random((4 * (c - got) + 8, m)) * widths
                dens = self._density_values(cand)
                keep = rng.random(cand.shape[0]) * dens_max[s] <= dens
                cand = cand[keep]
                take = min(c - got, cand.shape[0])
                pts[pos + got: pos + got + take] = cand[:take]
                got += take
            pos += c
        return pts

    def _density_values(self, x: np.ndarray) -> np.ndarray:
        inside = self.domain.contains(x)
        if self._uniform:
            return inside / self.domain.volume()
        return np.asarray(self._orig_density(x), dtype=float) * inside / self.normalization

    def _stratum_density_max(self, k: int, block: int) -> np.ndarray:
        sub = self.subsample
        m = self.dim
        subvol = float(np.prod(self.cell_widths)) / sub ** m
        dens = self.w_sub_by_cell / subvol                 # normalized density values
        dmax_cell = dens.max(axis=1).reshape((self.resolution,) * m)
        for ax in range(m):
            dmax_cell = dmax_cell.reshape(
                dmax_cell.shape[:ax] + (k, block) + dmax_cell.shape[ax + 1:]).max(axis=ax + 1)
        return dmax_cell.reshape(-1) * 1.0000001


def mass_of_region(mu: DensityMeasure, indicator: Callable) -> float:
    return mu.mass_of_region(indicator)


# ---------------------------------------------------------------------------
# One-dimensional measures
# ---------------------------------------------------------------------------

class Measure1D:
    """Atomless probability measure on an interval with CDF and quantile."""

    GRID = 8193

    def __init__(self, lo: float, hi: float, knots: np.ndarray, cdf_values: np.ndarray,
                 density_values: np.ndarray, uniform: bool = False):
        if not hi > lo:
            raise ConfigurationError(f"support requires lo < hi, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self.support = (self.lo, self.hi)
        self._knots = knots
        self._cdf = cdf_values
        self._dens = density_values
        self._uniform = uniform

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "Measure1D":
        knots = np.array([lo, hi], dtype=float)
        return cls(lo, hi, knots, np.array([0.0, 1.0]),
                   np.full(2, 1.0 / (hi - lo)), uniform=True)

    @classmethod
    def from_density(cls, density: Callable, lo: float, hi: float,
                     grid: int = GRID) -> "Measure1D":
        knots = np.linspace(lo, hi, grid)
        vals = np.asarray(density(knots), dtype=float)
        if np.any(vals < 0):
            raise ConfigurationError("density must be nonnegative")
        from scipy.integrate import cumulative_trapezoid
        cdf = np.concatenate([[0.0], cumulative_trapezoid(vals, knots)])
        total = cdf[-1]
        if total <= 0:
            raise ConfigurationError("density integrates to zero")
        return cls(lo, hi, knots, cdf / total, vals / total)

    @classmethod
    def from_bin_masses(cls, centers: np.ndarray, masses: np.ndarray,
                        lo: float, hi: float) -> "Measure1D":
        total = masses.sum()
        if total <= 0:
            raise ConfigurationError("empty marginal")
        masses = masses / total
        w = (hi - lo) / centers.size
        knots = np.concatenate([[lo], centers + 0.5 * w])
        knots[-1] = hi
        cdf = np.concatenate([[0.0], np.cumsum(masses)])
        cdf[-1] = 1.0
        # Bin averages live at bin centers; average adjacent bins to place
        # second-order density values on the edge knots.
        mid = masses / w
        dens = np.empty(knots.size)
        dens[0] = mid[0]
        dens[-1] = mid[-1]
        dens[1:-1] = 0.5 * (mid[:-1] + mid[1:])
        return cls(lo, hi, knots, cdf, dens)

    # -- queries --------------------------------------------------------------

    def cdf(self, y) -> np.ndarray:
        """nu((-inf, y)); atomless, so the closed version coincides."""
        y = np.asarray(y, dtype=float)
        if self._uniform:
            out = np.clip((y - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        else:
            out = np.interp(y, self._knots, self._cdf, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def quantile(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._uniform:
            out = self.lo + np.clip(q, 0.0, 1.0) * (self.hi - self.lo)
        else:
            out = np.interp(np.clip(q, 0.0, 1.0), self._cdf, self._knots)
        return out if out.ndim else float(out)

    def density(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self._uniform:
            out = np.where((y >= self.lo) & (y <= self.hi), 1.0 / (self.hi - self.lo), 0.0)
        else:
            out = np.interp(y, self._knots, self._dens, left=0.0, right=0.0)
        return out if out.ndim else float(out)

    def restrict(self, lo: float, hi: float) -> tuple["Measure1D", float]:
        mass = float(self.cdf(hi) - self.cdf(lo))
        if mass <= 0:
            raise ConfigurationError("restriction interval carries no mass")
        if self._uniform:
            return Measure1D.uniform(max(lo, self.lo), min(hi, self.hi)), mass
        lo2, hi2 = max(lo, self.lo), min(hi, self.hi)
        return Measure1D.from_density(lambda y: self.density(y), lo2, hi2), mass


def nu_cdf(nu: Measure1D, y: float) -> float:
    """Mass of (-inf, y); clamped outside the support."""
    return float(nu.cdf(y))
