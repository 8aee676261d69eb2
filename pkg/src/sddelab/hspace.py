"""Inner products of the fBm Hilbert space for step functions, H > 1/2.

<f, g> = alpha_H * sum_ij f_i g_j W_ij with
W_ij = int_{cell i} int_{cell j} |u - v|^{2H-2} du dv computed in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fbm import check_hurst
from .report import BoundReport


def alpha(hurst):
    return hurst * (2.0 * hurst - 1.0)


def _antiderivative(d, hurst):
    # second antiderivative of |d|^{2H-2}
    return np.abs(d) ** (2.0 * hurst) / (2.0 * hurst * (2.0 * hurst - 1.0))


def rectangle_integral(a, b, c, d, hurst):
    """int_a^b int_c^d |u - v|^{2H-2} dv du by inclusion-exclusion of corners."""
    F = lambda z: _antiderivative(z, hurst)  # noqa: E731
    return F(b - c) - F(a - c) - F(b - d) + F(a - d)


@dataclass(frozen=True, eq=False)
class CellWeightMatrix:
    hurst: float
    edges: np.ndarray  # cell boundaries, length n_cells + 1
    weights: np.ndarray

    @property
    def n_cells(self):
        return self.edges.size - 1

    @property
    def alpha(self):
        return alpha(self.hurst)

    def sub(self, lo, hi):
        """Weights restricted to cells lo..hi-1 (a contiguous block)."""
        return CellWeightMatrix(self.hurst, self.edges[lo:hi + 1],
                                self.weights[lo:hi, lo:hi])


def cell_weights(edges, hurst) -> CellWeightMatrix:
    """Exact cell-pair integrals of the singular kernel on a partition."""
    check_hurst(hurst)
    e = np.asarray(edges, dtype=float)
    if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
        raise ValueError("cell edges must be strictly increasing with >= 2 entries")
    a, b = e[:-1], e[1:]
    d = np.diff(e)
    uniform = np.allclose(d, d[0], rtol=1e-13, atol=0)
    if uniform:
        # Toeplitz: second difference of |k|^{2H} on the integer lattice
        n = a.size
        k = np.arange(n, dtype=float)
        p = 2.0 * hurst
        lag = np.empty(n)
        lag[0] = 2.0
        if n > 1:
            lag[1] = 2.0 ** p - 2.0
        if n > 2:
            kk = k[2:]
            x = 1.0 / kk
            # k^p [(1+x)^p - 2 + (1-x)^p] with expm1/log1p to limit cancellation
            lag[2:] = kk ** p * (np.expm1(p * np.log1p(x)) + np.expm1(p * np.log1p(-x)))
        lag *= d[0] ** p / (p * (p - 1.0))
        idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        W = lag[idx]
    else:
        W = rectangle_integral(a[:, None], b[:, None], a[None, :], b[None, :], hurst)
        W = 0.5 * (W + W.T)
    W.setflags(write=False)
    e.setflags(write=False)
    return CellWeightMatrix(hurst, e, W)


@dataclass(frozen=True, eq=False)
class StepFunction:
    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1] != e.size - 1:
            raise ValueError("need one value per cell")
        if not np.all(np.isfinite(v)):
            raise ValueError("step values must be finite")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)


def h_inner(f, g, w: CellWeightMatrix):
    """alpha_H-normalised inner product; accepts StepFunction or raw arrays.

    Raw arrays may carry leading batch dimensions; the last axis indexes cells.
    """
    fv = _values(f, w)
    gv = _values(g, w)
    return w.alpha * np.einsum("...i,ij,...j->...", fv, w.weights, gv)


def h_norm2(f, w):
    return h_inner(f, f, w)


def _values(f, w):
    if isinstance(f, StepFunction):
        if f.edges.shape != w.edges.shape or not np.allclose(f.edges, w.edges, rtol=0, atol=1e-14):
            raise ValueError("step function grid does not match the weight matrix")
        return f.values
    v = np.asarray(f, dtype=float)
    if v.shape[-1] != w.n_cells:
        raise ValueError(f"expected {w.n_cells} cell values, got {v.shape[-1]}")
    return v


def check_lemma_ap1(trials=10_000, dim=8, seed=0, hurst=0.75, tol=1e-10) -> BoundReport:
    """||f+g||^2 >= ||f||^2/2 - ||g||^2 on random step-function pairs.

    Margins are slacks scaled by ||f||^2 + ||g||^2 so ``tol`` is relative.
    """
    rng = np.random.default_rng(seed)
    edges = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 1.0, dim))])
    w = cell_weights(edges, hurst)
    f = rng.standard_normal((trials, dim))
    g = rng.standard_normal((trials, dim)) * rng.lognormal(0.0, 1.0, (trials, 1))
    ff, gg, sg = h_norm2(f, w), h_norm2(g, w), h_norm2(f + g, w)
    slack = sg - (ff / 2.0 - gg)
    scale = ff + gg
    return BoundReport(
        name="lemma_ap1",
        constants={"hurst": hurst, "dim": dim, "trials": trials, "seed": seed},
        points=[],
        margins=(slack / scale).tolist(),
        tolerance=tol,
        extra={"min_slack": float(slack.min())},
    )


def check_lemma_ap2(a, b, hurst, n_cells=16, tol=1e-10, seed=None) -> BoundReport:
    """Sum of all cell weights over [a, b] vs (b-a)^{2H}/alpha_H.

    Uses a uniform partition, or a random one when ``seed`` is given.
    """
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    if seed is None:
        edges = np.linspace(a, b, n_cells + 1)
    else:
        rng = np.random.default_rng(seed)
        inner = np.sort(rng.uniform(a, b, n_cells - 1))
        edges = np.concatenate([[a], inner, [b]])
    w = cell_weights(edges, hurst)
    total = float(w.weights.sum())
    exact = (b - a) ** (2 * hurst) / alpha(hurst)
    rel = abs(total - exact) / exact
    return BoundReport(
        name="lemma_ap2",
        constants={"a": a, "b": b, "hurst": hurst, "n_cells": n_cells},
        points=[[a, b]],
        margins=[tol - rel],
        extra={"cell_sum": total, "closed_form": exact, "rel_error": rel},
    )
