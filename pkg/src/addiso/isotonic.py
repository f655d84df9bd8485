"""One-dimensional weighted isotonic least squares.

`pava` is the production solver (stack-based pooling, linear time);
`max_min_reference` evaluates the max-min formula directly and exists only
as an independent check on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "IsotonicFit",
    "pava",
    "max_min_reference",
    "fit_isotonic",
    "evaluate",
    "center",
]


def _check_series(values, weights):
    y = np.asarray(values, dtype=float)
    if y.ndim != 1:
        raise ValueError("values must be one-dimensional")
    if y.size == 0:
        raise ValueError("values must not be empty")
    if not np.all(np.isfinite(y)):
        raise ValueError("values must be finite")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape:
            raise ValueError(
                f"weights has shape {w.shape}, expected {y.shape}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and strictly positive")
    return y, w


@numba.njit(cache=True)
def _pava_kernel(y, w):
    k = y.shape[0]
    sums = np.empty(k)
    wts = np.empty(k)
    level = np.empty(k)
    start = np.empty(k + 1, dtype=np.int64)
    top = -1
    for i in range(k):
        top += 1
        sums[top] = w[i] * y[i]
        wts[top] = w[i]
        level[top] = y[i]
        start[top] = i
        # strict test on stored levels: a nondecreasing input never merges,
        # so pava(pava(y)) == pava(y) bit for bit
        while top > 0 and level[top - 1] > level[top]:
            sums[top - 1] += sums[top]
            wts[top - 1] += wts[top]
            level[top - 1] = sums[top - 1] / wts[top - 1]
            top -= 1
    start[top + 1] = k
    out = np.empty(k)
    for b in range(top + 1):
        for i in range(start[b], start[b + 1]):
            out[i] = level[b]
    return out


def pava(values, weights=None) -> np.ndarray:
    """Weighted isotonic (nondecreasing) least-squares fit of `values`.

    Returns the unique minimizer of ``sum(w * (y - g)**2)`` over
    nondecreasing ``g``.  Runs in amortized O(k).
    """
    y, w = _check_series(values, weights)
    return _pava_kernel(y, w)


def max_min_reference(values, weights=None) -> np.ndarray:
    """Brute-force isotonic fit via the max-min formula.

    ``g[i] = max_{s <= i} min_{t >= i} mean_w(values[s..t])``.  Quadratic in
    memory and time; meant for checking `pava` on small inputs.
    """
    y, w = _check_series(values, weights)
    k = y.size
    wy = w * y
    # means[s, t] = weighted mean of y[s..t], summed forward from s
    means = np.full((k, k), np.nan)
    for s in range(k):
        means[s, s:] = np.cumsum(wy[s:]) / np.cumsum(w[s:])
    # inner[s, i] = min over t >= i of means[s, t]   (only s <= i is used)
    inner = np.minimum.accumulate(np.where(np.isnan(means), np.inf, means)[:, ::-1],
                                  axis=1)[:, ::-1]
    inner = np.where(np.triu(np.ones((k, k), dtype=bool)), inner, -np.inf)
    return inner.max(axis=0)


@dataclass(frozen=True)
class IsotonicFit:
    """Monotone step function on one covariate.

    Attributes
    ----------
    knots : ndarray
        Strictly increasing covariate values.
    levels : ndarray
        Nondecreasing fitted value at each knot.
    block_weights : ndarray
        Total observation weight pooled at each knot.
    """

    knots: np.ndarray
    levels: np.ndarray
    block_weights: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        levels = np.asarray(self.levels, dtype=float)
        weights = np.asarray(self.block_weights, dtype=float)
        if knots.ndim != 1 or knots.size == 0:
            raise ValueError("fit needs at least one knot")
        if levels.shape != knots.shape or weights.shape != knots.shape:
            raise ValueError("knots, levels and block_weights must align")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(levels) < 0):
            raise ValueError("levels must be nondecreasing")
        for name, arr in (("knots", knots), ("levels", levels),
                          ("block_weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __call__(self, x):
        return evaluate(self, x)

    def shift(self, c: float) -> "IsotonicFit":
        return IsotonicFit(self.knots, self.levels + c, self.block_weights)

    @property
    def mean(self) -> float:
        """Weighted mean of the levels under the block weights."""
        return float(np.dot(self.levels, self.block_weights)
                     / self.block_weights.sum())


def fit_isotonic(x, y, weights=None) -> IsotonicFit:
    """Fit a nondecreasing step function of `x` to `y`.

    Observations sharing an `x` value are pooled into a single knot whose
    weight is the sum of their weights.
    """
    x = np.asarray(x, dtype=float)
    y, w = _check_series(y, weights)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    knots, inverse = np.unique(x, return_inverse=True)
    block_w = np.bincount(inverse, weights=w, minlength=knots.size)
    means = np.bincount(inverse, weights=w * y, minlength=knots.size) / block_w
    return IsotonicFit(knots, _pava_kernel(means, block_w), block_w)


def evaluate(fit: IsotonicFit, x):
    """Evaluate the step function at `x` (scalar or array).

    Uses the level of the largest knot not exceeding `x`; constant
    extrapolation on both sides.
    """
    idx = np.searchsorted(fit.knots, x, side="right") - 1
    idx = np.clip(idx, 0, fit.knots.size - 1)
    out = fit.levels[idx]
    return float(out) if np.ndim(out) == 0 else out


def center(fit: IsotonicFit) -> tuple[IsotonicFit, float]:
    """Remove the weighted mean of the levels.

    Returns ``(fit - c, c)``.
    """
    c = fit.mean
    return fit.shift(-c), c
