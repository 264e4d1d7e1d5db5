"""Deterministic adaptive quadrature for the radial/angular detection integrals.

Globally adaptive Gauss-Legendre panels: each panel is integrated with a
31-node rule and its error estimated against a 15-node rule on the same
panel; the worst panel is bisected until the summed error estimate meets the
tolerance.  Node sets are fixed, so identical inputs give bit-identical
results.  Semi-infinite radial integrals are handled by integrating a finite
head interval sized from a caller-supplied decay scale and then doubling the
truncation point until the last panel no longer contributes.

Integrands must accept numpy arrays of abscissae and evaluate elementwise
(scalar-constant returns are broadcast).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .model import QuadratureSpec

_NODES_HI, _WEIGHTS_HI = leggauss(31)
_NODES_LO, _WEIGHTS_LO = leggauss(15)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class QuadResult:
    value: float
    est_error: float
    evaluations: int


class NonConvergence(Exception):
    """Adaptive refinement exhausted max_depth; carries the partial result."""

    def __init__(self, message: str, value: float, est_error: float, evaluations: int):
        super().__init__(message)
        self.value = value
        self.est_error = est_error
        self.evaluations = evaluations


def erfc(z: float) -> float:
    """Complementary error function (relative error well below 1e-12 for |z| <= 6)."""
    return math.erfc(z)


def _eval(f, x: np.ndarray) -> np.ndarray:
    y = np.asarray(f(x), dtype=float)
    if y.shape != x.shape:
        y = np.broadcast_to(y, x.shape)
    return y


def _panel(f, lo: float, hi: float) -> tuple[float, float]:
    """31-node value and |31-node - 15-node| error estimate on [lo, hi]."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    y_hi = _eval(f, mid + half * _NODES_HI)
    y_lo = _eval(f, mid + half * _NODES_LO)
    v_hi = half * float(_WEIGHTS_HI @ y_hi)
    v_lo = half * float(_WEIGHTS_LO @ y_lo)
    return v_hi, abs(v_hi - v_lo)


def integrate_1d(f, iv: Interval, spec: QuadratureSpec) -> QuadResult:
    """Adaptively integrate f over the finite interval iv.

    Raises NonConvergence when the worst panel would have to be bisected
    beyond spec.max_depth; the exception carries the partial value and the
    remaining error estimate.
    """
    evals = 46
    value, err = _panel(f, iv.lo, iv.hi)
    # panels: list of (err, creation_index, lo, hi, depth, value)
    panels = [(err, 0, iv.lo, iv.hi, 0, value)]
    counter = 1
    while True:
        total = sum(p[5] for p in panels)
        total_err = sum(p[0] for p in panels)
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if total_err <= tol:
            return QuadResult(total, total_err, evals)
        worst = max(panels, key=lambda p: (p[0], -p[1]))
        if worst[4] >= spec.max_depth:
            raise NonConvergence(
                f"max_depth={spec.max_depth} exhausted, residual error {total_err:.3e}",
                total, total_err, evals,
            )
        panels.remove(worst)
        _, _, lo, hi, depth, _ = worst
        mid = 0.5 * (lo + hi)
        for a, b in ((lo, mid), (mid, hi)):
            v, e = _panel(f, a, b)
            evals += 46
            panels.append((e, counter, a, b, depth + 1, v))
            counter += 1


def integrate_semi_infinite_radial(f, decay_scale: float, spec: QuadratureSpec) -> QuadResult:
    """Integrate f >= 0 over [0, inf) for integrands decaying beyond decay_scale.

    Integrates [0, C*decay_scale] first (C = spec.outer_tail_constant), then
    keeps doubling the truncation point; stops once the last extension panel
    contributes less than rel_tol of the accumulated value (abs_tol catches
    identically-zero integrands).  The doubling guard protects against an
    underestimated decay scale.
    """
    if decay_scale <= 0:
        raise ValueError("decay_scale must be positive")
    x_hi = spec.outer_tail_constant * decay_scale
    head = integrate_1d(f, Interval(0.0, x_hi), spec)
    total, err, evals = head.value, head.est_error, head.evaluations
    for _ in range(spec.max_depth):
        ext = integrate_1d(f, Interval(x_hi, 2.0 * x_hi), spec)
        total += ext.value
        err += ext.est_error
        evals += ext.evaluations
        x_hi *= 2.0
        if ext.value < max(spec.abs_tol, spec.rel_tol * total):
            return QuadResult(total, err, evals)
    raise NonConvergence(
        f"tail did not decay within {spec.max_depth} doublings of [0, {x_hi:.3e}]",
        total, err, evals,
    )


def integrate_2d_tensor(f, y_iv: Interval, u_iv: Interval, spec: QuadratureSpec) -> QuadResult:
    """Nested adaptive integral of f(y, u) over y_iv x u_iv (inner over u).

    f is called with a scalar y and an array of u values.
    """
    inner_evals = 0
    inner_err_peak = 0.0

    def outer(ys: np.ndarray) -> np.ndarray:
        nonlocal inner_evals, inner_err_peak
        out = np.empty_like(ys)
        for i, y in enumerate(ys):
            r = integrate_1d(lambda u, y=y: f(y, u), u_iv, spec)
            inner_evals += r.evaluations
            inner_err_peak = max(inner_err_peak, r.est_error)
            out[i] = r.value
        return out

    res = integrate_1d(outer, y_iv, spec)
    est = res.est_error + inner_err_peak * (y_iv.hi - y_iv.lo)
    return QuadResult(res.value, est, inner_evals)
