"""Uniform B-spline machinery: padded knots, Cox-de Boor basis, derivatives.

Conventions: order-0 functions are half-open interval indicators t_i <= x <
t_{i+1}, except that x == hi belongs to the last in-range interval so the
partition of unity holds on the closed range. 0/0 := 0 in the recursion.
Out-of-range inputs evaluate natively and decay to zero (no clamping).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UnsupportedOrderError


@dataclass(frozen=True)
class SplineSpec:
    """Grid count G (intervals before padding), polynomial order K, range."""

    grid_count: int
    order: int
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.grid_count < 1:
            raise ConfigError(f"grid_count must be >= 1, got {self.grid_count}")
        if self.order < 0:
            raise ConfigError(f"order must be >= 0, got {self.order}")
        if not self.lo < self.hi:
            raise ConfigError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def num_basis(self) -> int:
        """Dimension of the spline space on the padded grid: G + K."""
        return self.grid_count + self.order

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.grid_count


def make_knots(spec: SplineSpec) -> np.ndarray:
    """Uniform knot vector t_0..t_{G+2K} with t_K = lo and t_{G+K} = hi."""
    g, k = spec.grid_count, spec.order
    idx = np.arange(g + 2 * k + 1, dtype=np.float64)
    return spec.lo + (idx - k) * spec.spacing


def _safe_inv(den: np.ndarray) -> np.ndarray:
    """1/den with the 0/0 := 0 convention (zero denominators drop the term)."""
    out = np.zeros_like(den)
    nz = den != 0.0
    out[nz] = 1.0 / den[nz]
    return out


def _order0(xf: np.ndarray, knots: np.ndarray, order: int) -> np.ndarray:
    n_int = knots.size - 1
    b = ((xf[:, None] >= knots[None, :-1]) & (xf[:, None] < knots[None, 1:])).astype(np.float64)
    hi = knots[n_int - order]
    at_hi = xf == hi
    if at_hi.any():
        b[at_hi, :] = 0.0
        b[at_hi, n_int - order - 1] = 1.0
    return b


def _raise_order(b: np.ndarray, xf: np.ndarray, knots: np.ndarray, k: int) -> np.ndarray:
    n_int = knots.size - 1
    t_i = knots[: n_int - k]
    t_ik = knots[k:n_int]
    t_i1 = knots[1 : n_int - k + 1]
    t_ik1 = knots[k + 1 : n_int + 1]
    left = (xf[:, None] - t_i[None, :]) * _safe_inv(t_ik - t_i)[None, :]
    right = (t_ik1[None, :] - xf[:, None]) * _safe_inv(t_ik1 - t_i1)[None, :]
    return left * b[:, :-1] + right * b[:, 1:]


def _basis_flat(xf: np.ndarray, knots: np.ndarray, order: int, upto: int) -> np.ndarray:
    b = _order0(xf, knots, order)
    for k in range(1, upto + 1):
        b = _raise_order(b, xf, knots, k)
    return b


def _check_knots(knots: np.ndarray, order: int) -> np.ndarray:
    knots = np.asarray(knots, dtype=np.float64)
    if knots.ndim != 1 or knots.size < order + 2:
        raise ShapeError(f"knot vector of length {knots.size} cannot carry order {order}")
    return knots


def basis_eval(knots: np.ndarray, order: int, x) -> np.ndarray:
    """All G+K degree-K basis values at x (scalar or array; trailing axis added)."""
    knots = _check_knots(knots, order)
    x = np.asarray(x, dtype=np.float64)
    flat = _basis_flat(x.reshape(-1), knots, order, order)
    return flat.reshape(*x.shape, -1)


def basis_and_grad(knots: np.ndarray, order: int, x):
    """(values, derivatives) of the degree-K basis at x, sharing one recursion."""
    knots = _check_knots(knots, order)
    if order < 1:
        raise UnsupportedOrderError("basis derivative needs order >= 1")
    x = np.asarray(x, dtype=np.float64)
    xf = x.reshape(-1)
    bkm1 = _basis_flat(xf, knots, order, order - 1)
    vals = _raise_order(bkm1, xf, knots, order)
    m = vals.shape[1]
    inv_a = _safe_inv(knots[order : order + m] - knots[:m])
    inv_b = _safe_inv(knots[order + 1 : order + 1 + m] - knots[1 : 1 + m])
    grads = order * (bkm1[:, :-1] * inv_a[None, :] - bkm1[:, 1:] * inv_b[None, :])
    return vals.reshape(*x.shape, m), grads.reshape(*x.shape, m)


def basis_grad(knots: np.ndarray, order: int, x) -> np.ndarray:
    """Derivative of basis_eval with respect to x."""
    return basis_and_grad(knots, order, x)[1]


def spline_eval(coef, knots: np.ndarray, order: int, x) -> float:
    """Scalar spline value sum_i coef_i * B_{i,K}(x)."""
    knots = _check_knots(knots, order)
    coef = np.asarray(coef, dtype=np.float64)
    m = knots.size - 1 - order
    if coef.shape != (m,):
        raise ShapeError(f"coef shape {coef.shape}, expected ({m},)")
    # same sequential contraction as spline_eval_batch, so the two agree bitwise
    return float(np.einsum("m,m->", coef, basis_eval(knots, order, float(x))))


def spline_eval_batch(coef: np.ndarray, knots: np.ndarray, order: int, x) -> np.ndarray:
    """Per-edge splines: entry (j, i) is the spline coef[j, i, :] at x_i.

    The basis is evaluated once per input element and reused across outputs.
    """
    knots = _check_knots(knots, order)
    coef = np.asarray(coef, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    m = knots.size - 1 - order
    if coef.ndim != 3 or coef.shape[2] != m:
        raise ShapeError(f"coef shape {coef.shape}, expected (d_out, d_in, {m})")
    if x.ndim != 1 or x.size != coef.shape[1]:
        raise ShapeError(f"x shape {x.shape} vs coef d_in {coef.shape[1]}")
    basis = basis_eval(knots, order, x)  # (d_in, m)
    return np.einsum("jim,im->ji", coef, basis)
