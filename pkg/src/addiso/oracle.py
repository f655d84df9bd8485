"""Independent references for checking the backfitting output.

* `oracle_estimator`: isotonic fit of one component when every other
  component (and the intercept) is known.
* `nnls_reference_fit`: the joint least-squares projection computed without
  any cyclic projection, by writing each component as a base level plus
  nonnegative jumps and solving the resulting NNLS problem with an
  active-set method.
* `kkt_fixed_point_check`: blockwise optimality certificate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backfit import AdditiveFit, Dataset
from .isotonic import IsotonicFit, _pava_kernel, center

__all__ = [
    "OracleSpec",
    "NNLSCyclingError",
    "ReferenceFit",
    "oracle_estimator",
    "nnls_active_set",
    "nnls_reference_fit",
    "kkt_fixed_point_check",
    "component_vectors",
]


@dataclass(frozen=True)
class OracleSpec:
    """Known part of the model for the oracle fit of component `target`.

    `true_components` maps every other covariate index to its true
    (vectorized) regression function.
    """

    target: int
    true_components: dict[int, Callable[[np.ndarray], np.ndarray]]
    true_c: float = 0.0


def oracle_estimator(dataset: Dataset, spec: OracleSpec) -> tuple[IsotonicFit, float]:
    """Isotonic fit of component `spec.target` given the other components.

    Returns the centered component and the fitted intercept.
    """
    j = spec.target
    if not 0 <= j < dataset.d:
        raise IndexError(f"target {j} out of range for d={dataset.d}")
    missing = set(range(dataset.d)) - {j} - set(spec.true_components)
    if missing:
        raise ValueError(f"no true function for covariates {sorted(missing)}")
    resid = dataset.y - spec.true_c
    for l, fn in spec.true_components.items():
        if l == j:
            continue
        try:
            vals = np.asarray(fn(dataset.x[:, l]), dtype=float)
        except Exception as exc:
            raise ValueError(f"true component {l} failed to evaluate") from exc
        if vals.shape != (dataset.n,) or not np.all(np.isfinite(vals)):
            raise ValueError(f"true component {l} returned invalid values")
        resid = resid - vals
    order = dataset.orders[j]
    levels = _pava_kernel(dataset.knot_means(j, resid), order.weights)
    fit, c = center(IsotonicFit(order.knots, levels, order.weights))
    return fit, c + spec.true_c


class NNLSCyclingError(RuntimeError):
    """Active-set iteration limit exceeded."""


def nnls_active_set(A, b, tol: float | None = None, max_iter: int | None = None):
    """Lawson-Hanson active-set solver for ``min ||A x - b||`` s.t. ``x >= 0``.

    Returns ``(x, iterations)``.  Columns may be linearly dependent; the
    passive set stays independent because a column only enters with a
    strictly positive gradient.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if b.shape != (m,):
        raise ValueError("incompatible dimensions")
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, np.abs(A).sum(axis=0).max()) \
            * max(1.0, np.abs(b).max())
    if max_iter is None:
        max_iter = 3 * n + 10
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    it = 0
    while (~passive).any() and w[~passive].max() > tol:
        it += 1
        if it > max_iter:
            raise NNLSCyclingError(f"no convergence after {max_iter} outer steps")
        t = np.flatnonzero(~passive)[np.argmax(w[~passive])]
        passive[t] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                break
            it += 1
            if it > max_iter:
                raise NNLSCyclingError(f"no convergence after {max_iter} steps")
            blocking = passive & (z <= 0)
            alpha = np.min(x[blocking] / (x[blocking] - z[blocking]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                z = np.zeros(n)
                break
        x = z
        w = A.T @ (b - A @ x)
    return x, it


@dataclass(frozen=True)
class ReferenceFit:
    fitted: np.ndarray
    components: tuple[np.ndarray, ...]
    c: float
    objective: float
    iterations: int


def nnls_reference_fit(dataset: Dataset, tol: float | None = None) -> ReferenceFit:
    """Least-squares projection of y onto the sum of the monotone cones.

    Each component is ``sum_l delta_l * [x_j >= knot_l]`` with nonnegative
    jumps; the free intercept is profiled out by centering.  Components come
    back per knot with zero data mean, plus the intercept `c`.  Dense, so
    only meant for small n and d.
    """
    cols = []
    spans = []
    for order in dataset.orders:
        k = order.size
        steps = (order.inverse[:, None] >= np.arange(1, k)[None, :]).astype(float)
        spans.append((len(cols), len(cols) + k - 1))
        cols.extend(steps.T)
    y = dataset.y
    if cols:
        A = np.column_stack(cols)
        Ac = A - A.mean(axis=0)
        yc = y - y.mean()
        try:
            delta, it = nnls_active_set(Ac, yc, tol=tol)
        except NNLSCyclingError:
            # loosen the activation threshold and try once more
            base = tol if tol is not None else 1e-12 * (1.0 + np.abs(yc).max())
            delta, it = nnls_active_set(Ac, yc, tol=base * 10)
    else:
        A = np.zeros((dataset.n, 0))
        delta, it = np.zeros(0), 0
    components = []
    c = float(np.mean(y - A @ delta))
    for order, (lo, hi) in zip(dataset.orders, spans):
        gj = np.concatenate([[0.0], np.cumsum(delta[lo:hi])])
        mean = np.dot(gj, order.weights) / dataset.n
        components.append(gj - mean)
        c += mean
    fitted = c + dataset.evaluate(components)
    r = y - fitted
    return ReferenceFit(fitted, tuple(components), c, float(np.dot(r, r)), it)


def component_vectors(fit: AdditiveFit) -> list[np.ndarray]:
    """Per-knot component vectors of a fit with the intercept folded into the first."""
    g = [comp.levels.copy() for comp in fit.components]
    g[0] = g[0] + fit.c_hat
    return g


def kkt_fixed_point_check(dataset: Dataset, fit, tol: float) -> tuple[bool, float]:
    """Check that every component is the isotonic fit of its partial residuals.

    `fit` is an `AdditiveFit` or a sequence of per-knot component vectors
    (any intercept folded into one of them).  Returns ``(passed, max
    deviation)``; passing certifies that the fitted sum is the global least
    squares solution.
    """
    g = component_vectors(fit) if isinstance(fit, AdditiveFit) else \
        [np.asarray(gj, dtype=float) for gj in fit]
    if len(g) != dataset.d:
        raise ValueError(f"expected {dataset.d} components, got {len(g)}")
    for j, (order, gj) in enumerate(zip(dataset.orders, g)):
        if gj.shape != (order.size,):
            raise ValueError(f"component {j} has wrong length")
        if np.any(np.diff(gj) < 0):
            raise ValueError(f"component {j} is not nondecreasing")
    fitted = dataset.evaluate(g)
    worst = 0.0
    for j, (order, gj) in enumerate(zip(dataset.orders, g)):
        partial = dataset.y - fitted + gj[order.inverse]
        best = _pava_kernel(dataset.knot_means(j, partial), order.weights)
        worst = max(worst, float(np.abs(best - gj).max()))
    return worst <= tol, worst
