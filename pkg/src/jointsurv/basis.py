"""Spline bases and fixed-order quadrature rules.

Everything here is a pure function of its inputs: B-spline bases for the
log baseline hazard, a natural cubic basis (linear beyond the boundary
knots) for longitudinal time trends, numerical derivative/integral
variants of that basis, and Gauss-Kronrod / Gauss-Legendre rules.

The natural cubic basis is built from the truncated-power cubic basis
with linear-tail constraints.  It spans the standard natural-cubic space
but its coordinates are its own; fitted curves are basis-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidIntervalError, InvalidKnotsError, InvalidSpecError

__all__ = [
    "KnotVector",
    "QuadratureRule",
    "gauss_kronrod",
    "gauss_legendre",
    "integrate",
    "bspline_basis",
    "bspline_design",
    "natural_cubic_basis",
    "natural_cubic_deriv",
    "natural_cubic_integral",
    "percentile_knots",
]


# ---------------------------------------------------------------------------
# knot vectors

@dataclass(frozen=True)
class KnotVector:
    """Knots of a (by default cubic) B-spline on [low, high]."""

    interior: tuple[float, ...]
    boundary: tuple[float, float]
    degree: int = 3

    def __post_init__(self):
        low, high = self.boundary
        if not np.isfinite([low, high]).all() or low >= high:
            raise InvalidKnotsError(f"boundary knots must satisfy low < high, got {self.boundary}")
        if self.degree < 0:
            raise InvalidKnotsError(f"degree must be >= 0, got {self.degree}")
        interior = np.asarray(self.interior, dtype=float)
        if interior.size:
            if np.any(np.diff(interior) <= 0):
                raise InvalidKnotsError("interior knots must be strictly increasing")
            if interior[0] <= low or interior[-1] >= high:
                raise InvalidKnotsError("interior knots must lie strictly inside the boundary")

    @property
    def n_basis(self) -> int:
        return len(self.interior) + self.degree + 1

    def padded(self) -> np.ndarray:
        """Full knot sequence with boundary knots repeated degree+1 times."""
        low, high = self.boundary
        return np.concatenate([
            np.full(self.degree + 1, low),
            np.asarray(self.interior, dtype=float),
            np.full(self.degree + 1, high),
        ])


def percentile_knots(event_times, n_basis: int, degree: int = 3) -> KnotVector:
    """Knot vector with interior knots at equally spaced percentiles.

    The boundary is (0, max*(1+eps)) for nonnegative times so that every
    observed event time lies strictly inside the support.
    """
    times = np.asarray(event_times, dtype=float)
    if np.unique(times).size < 2:
        raise InvalidKnotsError("need at least 2 distinct event times (duplicate knots otherwise)")
    n_interior = n_basis - degree - 1
    if n_interior < 0:
        raise InvalidKnotsError(f"n_basis={n_basis} too small for degree {degree}")
    low = 0.0 if times.min() >= 0 else float(times.min())
    high = float(times.max()) * (1.0 + 1e-3)
    if n_interior == 0:
        return KnotVector(interior=(), boundary=(low, high), degree=degree)
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    interior = np.quantile(times, probs)
    if np.any(np.diff(interior) <= 0):
        raise InvalidKnotsError("duplicate interior knots; reduce n_basis or jitter the times")
    return KnotVector(interior=tuple(interior), boundary=(low, high), degree=degree)


# ---------------------------------------------------------------------------
# B-splines (Cox-de Boor, iterative over the degree)

def bspline_design(t, knots: KnotVector) -> np.ndarray:
    """B-spline design matrix, one row per evaluation point.

    Points outside [low, high] are clamped to the nearest boundary, so
    extrapolated log-hazards are constant.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    low, high = knots.boundary
    t = np.clip(t, low, high)
    tau = knots.padded()
    d = knots.degree
    m = t.shape[0]
    n0 = len(tau) - 1

    # degree-0 indicators on half-open intervals, closing the last one at high
    left = tau[:-1]
    right = tau[1:]
    N = ((t[:, None] >= left) & (t[:, None] < right)).astype(float)
    at_end = t == high
    if np.any(at_end):
        last = np.nonzero(right == high)[0]
        if last.size == 0:
            raise InvalidKnotsError("malformed knot sequence")
        N[at_end, last[0]] = 1.0

    for k in range(1, d + 1):
        n_k = n0 - k
        N_next = np.zeros((m, n_k))
        for i in range(n_k):
            den1 = tau[i + k] - tau[i]
            den2 = tau[i + k + 1] - tau[i + 1]
            if den1 > 0:
                N_next[:, i] += (t - tau[i]) / den1 * N[:, i]
            if den2 > 0:
                N_next[:, i] += (tau[i + k + 1] - t) / den2 * N[:, i + 1]
        N = N_next

    assert N.shape[1] == knots.n_basis
    return N


def bspline_basis(t: float, knots: KnotVector) -> np.ndarray:
    """Length-Q basis vector at a single time point."""
    return bspline_design(np.array([t]), knots)[0]


# ---------------------------------------------------------------------------
# natural cubic basis (truncated-power construction with linear tails)

def _check_nc_args(df: int, boundary, interior):
    if df < 1:
        raise InvalidSpecError(f"natural cubic basis needs df >= 1, got {df}")
    a, b = float(boundary[0]), float(boundary[1])
    if not np.isfinite([a, b]).all() or a >= b:
        raise InvalidSpecError(f"boundary must be finite with low < high, got {boundary}")
    interior = tuple(float(x) for x in (interior or ()))
    if len(interior) != df - 1:
        raise InvalidSpecError(
            f"df={df} requires {df - 1} interior knots, got {len(interior)}")
    for x in interior:
        if not a < x < b:
            raise InvalidSpecError("interior knots must lie strictly inside the boundary")
    if any(np.diff(interior) <= 0):
        raise InvalidSpecError("interior knots must be strictly increasing")
    return a, b, interior


def natural_cubic_basis(t, df: int, boundary, interior=None) -> np.ndarray:
    """Natural cubic spline basis with df columns (no intercept column).

    Column 1 is the scaled linear term; the remaining columns are the
    usual truncated-power differences, which are C^2 inside and exactly
    linear outside the boundary knots.
    """
    a, b, interior = _check_nc_args(df, boundary, interior)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    scale = b - a
    cols = [(t - a) / scale]
    if df > 1:
        xi = np.array([a, *interior, b])  # K = df + 1 knots
        K = xi.size

        def d_func(k):
            num = np.maximum(t - xi[k], 0.0) ** 3 - np.maximum(t - xi[K - 1], 0.0) ** 3
            return num / (xi[K - 1] - xi[k])

        d_last = d_func(K - 2)
        for k in range(K - 2):
            cols.append((d_func(k) - d_last) / scale**2)
    return np.column_stack(cols)


def natural_cubic_deriv(t, df: int, boundary, interior=None, h_rel: float = 1e-5) -> np.ndarray:
    """d/dt of each natural_cubic_basis column by central difference.

    Step h = h_rel * max(1, |t|), balancing truncation against round-off.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    h = h_rel * np.maximum(1.0, np.abs(t))
    upper = natural_cubic_basis(t + h, df, boundary, interior)
    lower = natural_cubic_basis(t - h, df, boundary, interior)
    return (upper - lower) / (2.0 * h)[:, None]


def natural_cubic_integral(t, df: int, boundary, interior=None) -> np.ndarray:
    """Component-wise integral of the basis from 0 to t.

    GK15 is applied on panels split at the spline knots so each panel
    integrates a plain cubic (the rule is then exact and the result is
    additive across subintervals to machine precision).
    """
    a, b, interior = _check_nc_args(df, boundary, interior)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise InvalidIntervalError("integral lower limit is 0; t must be >= 0")
    rule = gauss_kronrod(15)
    breakpoints = np.array([a, *interior, b])
    out = np.zeros((t.shape[0], df))
    for row, ti in enumerate(t):
        if ti == 0.0:
            continue
        cuts = np.concatenate([[0.0], breakpoints[(breakpoints > 0) & (breakpoints < ti)], [ti]])
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            nodes = mid + half * rule.nodes
            vals = natural_cubic_basis(nodes, df, boundary, interior)
            out[row] += half * (rule.weights @ vals)
    return out


# ---------------------------------------------------------------------------
# quadrature

# QUADPACK 15-point Kronrod abscissae/weights on [-1, 1] (positive half).
_GK15_NODES = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_GK15_WEIGHTS = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
# Embedded 7-point Gauss rule (the odd-indexed Kronrod nodes).
_G7_NODES = _GK15_NODES[1::2]
_G7_WEIGHTS = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
])


def _mirror(half_nodes, half_weights):
    # half arrays list positive nodes descending and end with the center node
    nodes = np.concatenate([-half_nodes[:-1], half_nodes[::-1]])
    weights = np.concatenate([half_weights[:-1], half_weights[::-1]])
    order = np.argsort(nodes)
    return nodes[order], weights[order]


@dataclass(frozen=True)
class QuadratureRule:
    """Fixed nodes/weights on the reference interval [-1, 1]."""

    kind: str
    points: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        x = np.asarray(self.nodes, dtype=float)
        if np.any(w <= 0):
            raise InvalidSpecError("quadrature weights must be positive")
        if abs(w.sum() - 2.0) > 1e-12:
            raise InvalidSpecError("weights must sum to 2 on [-1, 1]")
        if np.max(np.abs(x + x[::-1])) > 1e-12:
            raise InvalidSpecError("nodes must be symmetric about 0")


def gauss_kronrod(points: int = 15) -> QuadratureRule:
    """Gauss-Kronrod family rule; points must be 7 or 15.

    The 7-point variant is the Gauss rule embedded in the 15-point
    Kronrod extension (same abscissae subset).
    """
    if points == 15:
        nodes, weights = _mirror(_GK15_NODES, _GK15_WEIGHTS)
    elif points == 7:
        nodes, weights = _mirror(_G7_NODES, _G7_WEIGHTS)
    else:
        raise InvalidSpecError("Gauss-Kronrod rule supports 7 or 15 points only")
    return QuadratureRule("GaussKronrod", points, nodes, weights)


def gauss_legendre(points: int) -> QuadratureRule:
    if points < 1:
        raise InvalidSpecError("Gauss-Legendre rule needs at least 1 point")
    nodes, weights = np.polynomial.legendre.leggauss(points)
    return QuadratureRule("GaussLegendre", points, nodes, weights)


def integrate(f, a: float, b: float, rule: QuadratureRule | None = None) -> float:
    """Rescaled node sum of f over [a, b]; exact up to the rule's degree."""
    if a > b:
        raise InvalidIntervalError(f"invalid interval [{a}, {b}]")
    if a == b:
        return 0.0
    if rule is None:
        rule = gauss_kronrod(15)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    x = mid + half * rule.nodes
    try:
        vals = np.asarray(f(x), dtype=float)
        if vals.shape != x.shape:
            raise ValueError
    except (TypeError, ValueError):
        vals = np.array([float(f(xi)) for xi in x])
    return float(half * np.dot(rule.weights, vals))
