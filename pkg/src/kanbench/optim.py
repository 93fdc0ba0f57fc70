"""Optimizers for the comparison experiments: Adam and L-BFGS.

Adam runs all main sweeps (canonical beta/eps defaults, constant lr). L-BFGS
is the large-batch variant: two-loop recursion over an m=10 history with a
backtracking Armijo line search, full-batch semantics per step.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import NumericError


def flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)


def write_back(vector: np.ndarray, arrays: list[np.ndarray]) -> None:
    """Scatter a flat vector into the (mutable) arrays it was packed from."""
    offset = 0
    for a in arrays:
        a[...] = vector[offset : offset + a.size].reshape(a.shape)
        offset += a.size


class Adam:
    """Bias-corrected Adam; updates parameter arrays in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise NumericError(f"{len(grads)} grads for {len(self.params)} params")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Lbfgs:
    """Two-loop L-BFGS on a flat parameter vector.

    step() takes the current point and an oracle x -> (loss, grad) that must
    be deterministic within the step (it is re-evaluated by the line search).
    Pairs violating the curvature condition are skipped; if 20 halvings never
    satisfy Armijo the step falls back to plain gradient descent.
    """

    def __init__(self, history: int = 10, c1: float = 1e-4, max_ls: int = 20,
                 fallback_lr: float = 1e-3):
        self.history = deque(maxlen=history)  # (s, y, rho) triples
        self.c1 = c1
        self.max_ls = max_ls
        self.fallback_lr = fallback_lr

    def _direction(self, g: np.ndarray) -> np.ndarray:
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.history):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if self.history:
            s, y, _ = self.history[-1]
            q *= (s @ y) / (y @ y)
        else:
            # fresh memory: unit-capped steepest descent avoids a degenerate
            # first line search when the gradient is huge
            q *= min(1.0, 1.0 / np.linalg.norm(q))
        for (s, y, rho), a in zip(self.history, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q

    def step(self, x: np.ndarray, oracle) -> tuple[np.ndarray, float]:
        """One quasi-Newton step from x; returns (new point, loss at x)."""
        f0, g0 = oracle(x)
        if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
            raise NumericError("non-finite loss or gradient")
        if not np.any(g0):
            return x, f0
        d = self._direction(g0)
        slope = g0 @ d
        if slope >= 0:  # degenerate history; fall back to steepest descent
            d = -g0
            slope = g0 @ d
        alpha = 1.0
        x_new = None
        for _ in range(self.max_ls):
            cand = x + alpha * d
            f_cand, _ = oracle(cand)
            if np.isfinite(f_cand) and f_cand <= f0 + self.c1 * alpha * slope:
                x_new = cand
                break
            alpha *= 0.5
        if x_new is None:
            x_new = x - self.fallback_lr * g0
        _, g_new = oracle(x_new)
        s = x_new - x
        y = g_new - g0
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            self.history.append((s, y, 1.0 / sy))
        else:
            # a skipped pair means the memory no longer models the local
            # curvature; restart rather than keep producing stale directions
            self.history.clear()
        return x_new, f0
