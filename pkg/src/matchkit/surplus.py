"""Surplus functions and their structural probes.

A Surplus bundles s(x, y) with the partial derivatives the level-set
construction consumes: D_x s, s_y, s_yy and D_x s_y (the mixed second
derivatives; for one-dimensional y these form a single column). Catalog
entries carry analytic derivatives; expression-based surpluses fall back
to central finite differences.

The probes implemented here are the paper-independent structural tests
used throughout the solver: the cross difference, injectivity of
y -> D_x s(x, y) (twist), and non-vanishing of D_x s_y (non-degeneracy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .expressions import compile_expression

TWIST_TOL = 1e-8
DEGENERACY_TOL = 1e-8

_FD_REL_STEP = 1e-5     # first derivatives, central differences
_FD_STEP2 = 1e-4        # nested differencing for second derivatives


@dataclass(frozen=True)
class Surplus:
    """s(x, y) with first and second partials; x has shape (..., m), y broadcasts."""

    m: int
    value: Callable
    grad_x: Callable
    d_y: Callable
    d_yy: Callable
    grad_x_dy: Callable
    provenance: str = "analytic_catalog"
    name: str = ""
    params: dict = field(default_factory=dict)

    def mixed_hessian(self, x, y) -> np.ndarray:
        """D^2_{xy}s as an (..., m, 1) column; equals grad_x_dy for n = 1."""
        return np.asarray(self.grad_x_dy(x, y))[..., None]


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def _fd_grad_x(f: Callable, x: np.ndarray, y, rel: float = _FD_REL_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape)
    for d in range(x.shape[-1]):
        h = rel * np.maximum(1.0, np.abs(x[..., d]))
        xp = x.copy()
        xm = x.copy()
        xp[..., d] += h
        xm[..., d] -= h
        out[..., d] = (f(xp, y) - f(xm, y)) / (2 * h)
    return out


def _fd_d_y(f: Callable, x, y, rel: float = _FD_REL_STEP) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    h = rel * np.maximum(1.0, np.abs(y))
    return (f(x, y + h) - f(x, y - h)) / (2 * h)


def finite_difference_surplus(m: int, value: Callable, name: str = "",
                              params: Optional[dict] = None) -> Surplus:
    """Wrap a plain s(x, y) callable with finite-difference derivatives."""

    def d_y(x, y):
        return _fd_d_y(value, x, y)

    def d_yy(x, y):
        y = np.asarray(y, dtype=float)
        h = _FD_STEP2 * np.maximum(1.0, np.abs(y))
        return (value(x, y + h) - 2 * value(x, y) + value(x, y - h)) / (h * h)

    def grad_x(x, y):
        return _fd_grad_x(value, x, y)

    def grad_x_dy(x, y):
        return _fd_grad_x(d_y, x, y, rel=_FD_STEP2)

    return Surplus(m=m, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=grad_x_dy, provenance="expression_fd",
                   name=name, params=params or {})


# ---------------------------------------------------------------------------
# Expression surpluses
# ---------------------------------------------------------------------------

def parse_surplus_expression(text: str, m: int,
                             aliases: Optional[dict] = None) -> Surplus:
    """Surplus from an arithmetic expression over x1..xm and y.

    aliases maps extra variable names onto canonical ones, e.g.
    {"p": "x1", "x": "x2"} for the fertility model's conventional letters.
    """
    aliases = dict(aliases or {})
    canonical = [f"x{i + 1}" for i in range(m)] + ["y"]
    for alias, target in aliases.items():
        if target not in canonical:
            raise ConfigurationError(f"alias target {target!r} is not a variable")
    fn = compile_expression(text, canonical + list(aliases))

    def value(x, y):
        x = np.asarray(x, dtype=float)
        env = {f"x{i + 1}": x[..., i] for i in range(m)}
        env["y"] = np.asarray(y, dtype=float)
        for alias, target in aliases.items():
            env[alias] = env[target]
        return np.asarray(fn(**env), dtype=float)

    return finite_difference_surplus(m, value, name="expression",
                                     params={"expression": text})


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

def income_fertility_surplus() -> Surplus:
    """Fertility/income marriage surplus: s = p(x+y+1)^2/4 + (1-p)(x+y).

    Coordinates: x1 = p (fertility), x2 = x (wife income), y = husband income.
    """

    def value(x, y):
        p, w = x[..., 0], x[..., 1]
        return p * (w + y + 1.0) ** 2 / 4.0 + (1.0 - p) * (w + y)

    def grad_x(x, y):
        p, w = x[..., 0], x[..., 1]
        g = np.empty(np.broadcast(p, np.asarray(y)).shape + (2,))
        g[..., 0] = (w + y + 1.0) ** 2 / 4.0 - (w + y)
        g[..., 1] = p * (w + y + 1.0) / 2.0 + (1.0 - p)
        return g

    def d_y(x, y):
        p, w = x[..., 0], x[..., 1]
        return p * (w + y + 1.0) / 2.0 + (1.0 - p)

    def d_yy(x, y):
        p = x[..., 0]
        return np.broadcast_to(p / 2.0, np.broadcast(p, np.asarray(y)).shape).copy()

    def grad_x_dy(x, y):
        p, w = x[..., 0], x[..., 1]
        g = np.empty(np.broadcast(p, np.asarray(y)).shape + (2,))
        g[..., 0] = (w + y - 1.0) / 2.0
        g[..., 1] = p / 2.0
        return g

    return Surplus(m=2, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=grad_x_dy, name="income_fertility")


def rc_index_surplus(m: int = 2) -> Surplus:
    """Competitive screening surplus s = y |x|^2 / 2 (index form in |x|^2)."""

    def value(x, y):
        return 0.5 * np.asarray(y) * np.einsum("...d,...d->...", x, x)

    def grad_x(x, y):
        return np.asarray(y)[..., None] * np.asarray(x, dtype=float)

    def d_y(x, y):
        q = 0.5 * np.einsum("...d,...d->...", x, x)
        return np.broadcast_to(q, np.broadcast(q, np.asarray(y)).shape).copy()

    def d_yy(x, y):
        return np.zeros(np.broadcast(np.asarray(x)[..., 0], np.asarray(y)).shape)

    def grad_x_dy(x, y):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(x[..., 0], np.asarray(y)).shape
        return np.broadcast_to(x, shape + (x.shape[-1],)).copy()

    return Surplus(m=m, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=grad_x_dy, name="rc_index", params={"m": m})


def coordinate_quadratic_surplus(i: int, m: int) -> Surplus:
    """Single-coordinate quadratic surplus s = x_i^2 y / 2.

    These are the additive pieces of the product-market model with
    coordinatewise costs; each piece is an index surplus in x_i alone.
    """
    if not 0 <= i < m:
        raise ConfigurationError(f"coordinate {i} out of range for m={m}")

    def value(x, y):
        return 0.5 * np.asarray(x)[..., i] ** 2 * np.asarray(y)

    def grad_x(x, y):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(x[..., 0], np.asarray(y)).shape
        g = np.zeros(shape + (m,))
        g[..., i] = x[..., i] * np.asarray(y)
        return g

    def d_y(x, y):
        q = 0.5 * np.asarray(x)[..., i] ** 2
        return np.broadcast_to(q, np.broadcast(q, np.asarray(y)).shape).copy()

    def d_yy(x, y):
        return np.zeros(np.broadcast(np.asarray(x)[..., 0], np.asarray(y)).shape)

    def grad_x_dy(x, y):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(x[..., 0], np.asarray(y)).shape
        g = np.zeros(shape + (m,))
        g[..., i] = np.broadcast_to(x[..., i], shape)
        return g

    return Surplus(m=m, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=grad_x_dy, name="coordinate_quadratic",
                   params={"i": i, "m": m})


def pseudo_index_surplus(weights: Sequence[float] = (0.6, 0.4),
                         alpha: Sequence[float] = (0.3, -0.15),
                         curvature: float = 0.25) -> Surplus:
    """Pseudo-index surplus s = a(x) + sigma(I(x), y), I = w . x.

    Husband types enter only through the scalar index I, so iso-husband
    sets are the straight lines I(x) = const regardless of the measures;
    the model is nested for every population pair. The additive a(x)
    never affects the matching.

    sigma(i, y) = i*y + curvature * i * y^2; its cross partial
    (1 + 2*curvature*y) must stay positive on the support of nu.
    """
    w = np.asarray(weights, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if w.size != a.size:
        raise ConfigurationError("weights and alpha must have equal length")
    if np.any(w <= 0):
        raise ConfigurationError("index weights must be positive")
    m = w.size
    c = float(curvature)

    def index(x):
        return np.einsum("...d,d->...", np.asarray(x, dtype=float), w)

    def value(x, y):
        x = np.asarray(x, dtype=float)
        al = x[..., 0] ** 2 * a[0]
        for d in range(1, m):
            al = al + a[d] * x[..., d]
        i = index(x)
        return al + i * np.asarray(y) + c * i * np.asarray(y) ** 2

    def grad_x(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y)
        sig_i = y + c * y ** 2
        shape = np.broadcast(x[..., 0], y).shape
        g = np.empty(shape + (m,))
        g[..., 0] = 2 * a[0] * x[..., 0] + sig_i * w[0]
        for d in range(1, m):
            g[..., d] = a[d] + sig_i * w[d]
        return g

    def d_y(x, y):
        return index(x) * (1.0 + 2.0 * c * np.asarray(y))

    def d_yy(x, y):
        i = index(x)
        return np.broadcast_to(2.0 * c * i, np.broadcast(i, np.asarray(y)).shape).copy()

    def grad_x_dy(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y)
        shape = np.broadcast(x[..., 0], y).shape
        fac = 1.0 + 2.0 * c * y
        return np.broadcast_to(fac[..., None] if np.ndim(fac) else fac, shape + (m,)) * w

    return Surplus(m=m, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=grad_x_dy, name="pseudo_index",
                   params={"weights": tuple(w), "alpha": tuple(a), "curvature": c})


_SEPARABLE_FACTORS = {
    # name -> (f, f') families used by the diagonal-separable catalog entry
    "identity": lambda p: (lambda t: t, lambda t: np.ones_like(np.asarray(t, dtype=float))),
    "affine": lambda p: (lambda t: p[0] * t + p[1], lambda t: p[0] * np.ones_like(np.asarray(t, dtype=float))),
    "square": lambda p: (lambda t: p[0] * t * t, lambda t: 2 * p[0] * t),
    "exp": lambda p: (lambda t: np.exp(p[0] * t), lambda t: p[0] * np.exp(p[0] * t)),
}


def diagonal_separable_surplus(terms: Sequence[tuple]) -> Surplus:
    """Sum of products s = sum_k f_k(x_k) g_k(y) for one-dimensional y.

    Each term is ((f_name, f_params), (g_name, g_params)) drawn from the
    factor families identity, affine(a, b), square(a), exp(a). With every
    g_k strictly monotone and every f_k' non-vanishing this family is
    twisted on the interior.
    """
    m = len(terms)
    fs, dfs, gs, dgs = [], [], [], []
    for (fname, fpar), (gname, gpar) in terms:
        if fname not in _SEPARABLE_FACTORS or gname not in _SEPARABLE_FACTORS:
            raise ConfigurationError(f"unknown separable factor {fname!r}/{gname!r}")
        f, df = _SEPARABLE_FACTORS[fname](tuple(fpar))
        g, dg = _SEPARABLE_FACTORS[gname](tuple(gpar))
        fs.append(f)
        dfs.append(df)
        gs.append(g)
        dgs.append(dg)

    def value(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        tot = 0.0
        for k in range(m):
            tot = tot + fs[k](x[..., k]) * gs[k](y)
        return tot

    def grad_x(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x[..., 0], y).shape
        g = np.empty(shape + (m,))
        for k in range(m):
            g[..., k] = dfs[k](x[..., k]) * gs[k](y)
        return g

    def d_y(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        tot = 0.0
        for k in range(m):
            tot = tot + fs[k](x[..., k]) * dgs[k](y)
        return tot

    def d_yy(x, y):
        h = _FD_STEP2
        return (d_y(x, np.asarray(y) + h) - d_y(x, np.asarray(y) - h)) / (2 * h)

    def grad_x_dy(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x[..., 0], y).shape
        g = np.empty(shape + (m,))
        for k in range(m):
            g[..., k] = dfs[k](x[..., k]) * dgs[k](y)
        return g

    return Surplus(m=m, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=grad_x_dy, name="diagonal_separable",
                   params={"terms": tuple(map(tuple, terms))})


def with_additive(s: Surplus, f: Optional[Callable] = None,
                  g: Optional[Callable] = None) -> Surplus:
    """s + f(x) + g(y); matching-irrelevant shifts, used by invariance tests."""
    f = f or (lambda x: 0.0)
    g = g or (lambda y: 0.0)

    def value(x, y):
        return s.value(x, y) + f(np.asarray(x, dtype=float)) + g(np.asarray(y, dtype=float))

    def grad_x(x, y):
        return _fd_grad_x(lambda xx, yy: f(xx), x, y) + np.asarray(s.grad_x(x, y))

    def d_y(x, y):
        return s.d_y(x, y) + _fd_d_y(lambda xx, yy: g(yy), x, y)

    def d_yy(x, y):
        h = _FD_STEP2 * np.maximum(1.0, np.abs(np.asarray(y, dtype=float)))
        gy = (g(np.asarray(y) + h) - 2 * g(np.asarray(y)) + g(np.asarray(y) - h)) / (h * h)
        return s.d_yy(x, y) + gy

    return Surplus(m=s.m, value=value, grad_x=grad_x, d_y=d_y, d_yy=d_yy,
                   grad_x_dy=s.grad_x_dy, provenance=s.provenance,
                   name=s.name + "+additive", params=s.params)


_CATALOG = {
    "income_fertility": lambda params: income_fertility_surplus(),
    "rc_index": lambda params: rc_index_surplus(**params),
    "coordinate_quadratic": lambda params: coordinate_quadratic_surplus(**params),
    "pseudo_index": lambda params: pseudo_index_surplus(**params),
    "diagonal_separable": lambda params: diagonal_separable_surplus(**params),
}


def catalog_surplus(name: str, params: Optional[dict] = None) -> Surplus:
    if name not in _CATALOG:
        raise ConfigurationError(
            f"unknown catalog surplus {name!r}; choose from {sorted(_CATALOG)}")
    return _CATALOG[name](params or {})


# ---------------------------------------------------------------------------
# Structural probes
# ---------------------------------------------------------------------------

def cross_difference(s: Surplus, x, y, x0, y0):
    """delta(x, y, x0, y0) = s(x,y) + s(x0,y0) - s(x,y0) - s(x0,y)."""
    return (np.asarray(s.value(x, y)) + np.asarray(s.value(x0, y0))
            - np.asarray(s.value(x, y0)) - np.asarray(s.value(x0, y)))


@dataclass(frozen=True)
class TwistReport:
    holds: bool
    min_separation: float
    witnesses: tuple    # (x, y, y0, |D_x s(x,y) - D_x s(x,y0)|) where the test fails


def check_twist(s: Surplus, x_samples, y_pairs, twist_tol: float = TWIST_TOL) -> TwistReport:
    """Test injectivity of y -> D_x s(x, y) on samples.

    For each sampled x and pair y != y0 the gradients must differ by more
    than twist_tol in norm; failing triples are returned as witnesses.
    """
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    witnesses = []
    min_sep = np.inf
    for (y, y0) in y_pairs:
        if y == y0:
            continue
        diff = np.asarray(s.grad_x(x_samples, y)) - np.asarray(s.grad_x(x_samples, y0))
        norms = np.linalg.norm(diff, axis=-1)
        min_sep = min(min_sep, float(norms.min()))
        bad = np.nonzero(norms <= twist_tol)[0]
        for i in bad:
            witnesses.append((tuple(x_samples[i]), float(y), float(y0), float(norms[i])))
    return TwistReport(holds=not witnesses, min_separation=float(min_sep),
                       witnesses=tuple(witnesses))


@dataclass(frozen=True)
class NondegeneracyReport:
    min_norm: float
    degenerate_points: tuple    # (x, y, |D_x s_y|) at or below tolerance


def check_nondegeneracy(s: Surplus, x_samples, y_samples,
                        degeneracy_tol: float = DEGENERACY_TOL) -> NondegeneracyReport:
    """Minimum of |D_x s_y| over the sample grid, with offending points."""
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    y_samples = np.atleast_1d(np.asarray(y_samples, dtype=float))
    min_norm = np.inf
    degenerate = []
    for y in y_samples:
        norms = np.linalg.norm(np.asarray(s.grad_x_dy(x_samples, y)), axis=-1)
        min_norm = min(min_norm, float(norms.min()))
        for i in np.nonzero(norms <= degeneracy_tol)[0]:
            degenerate.append((tuple(x_samples[i]), float(y), float(norms[i])))
    return NondegeneracyReport(min_norm=float(min_norm),
                               degenerate_points=tuple(degenerate))


def fd_consistency(s: Surplus, x_samples, y_samples, rel_tol: float = 1e-5) -> float:
    """Worst relative disagreement between analytic and FD first derivatives."""
    x = np.atleast_2d(np.asarray(x_samples, dtype=float))
    worst = 0.0
    for y in np.atleast_1d(y_samples):
        g_an = np.asarray(s.grad_x(x, y))
        g_fd = _fd_grad_x(s.value, x, y)
        scale = np.maximum(1.0, np.abs(g_an))
        worst = max(worst, float(np.max(np.abs(g_an - g_fd) / scale)))
        d_an = np.asarray(s.d_y(x, y))
        d_fd = _fd_d_y(s.value, x, y)
        scale = np.maximum(1.0, np.abs(d_an))
        worst = max(worst, float(np.max(np.abs(d_an - d_fd) / scale)))
    return worst
