"""Pathwise Malliavin derivatives of the delayed SDE inside one delay block.

Within a block narrower than r the diffusion integrand is already known,
so D_s X_tau solves a linear ODE with closed form

    D_s X_tau = sigma(X_{s-r}) * exp(int_s^tau b'(X_u) du),   s <= tau,

and vanishes for tau < s. For tau <= r this is sigma(eta(s-r)) * exp(...).
Time integrals use the trapezoid rule on the solve grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, exp

import numpy as np

from . import coeffs
from .hspace import CellWeightMatrix, h_norm2
from .report import BoundReport
from .sdde import ModelError, SolutionPaths


def _cum_trapezoid(y, dx):
    out = np.zeros(y.shape)
    out[..., 1:] = np.cumsum(0.5 * (y[..., 1:] + y[..., :-1]) * dx, axis=-1)
    return out


def _bprime_integral(sol, lo, hi):
    """C[:, k] = int_{t_lo}^{t_{lo+k}} b'(X_u) du for k = 0..hi-lo."""
    cols = slice(sol.m + lo, sol.m + hi + 1)
    bp = coeffs.evaluate(sol.model.b.derivative, sol.values[:, cols])
    return _cum_trapezoid(bp, sol.model.dt)


def _sigma_delayed(sol, lo, hi):
    """sigma(X_{t_j - r}) for j = lo..hi; column j of values is time t_j - r."""
    return coeffs.evaluate(sol.model.sigma.expr, sol.values[:, lo:hi + 1])


def _indices(sol, s, t):
    model = sol.model
    i_s, i_t = model.index(s), model.index(t)
    if i_s > i_t:
        raise ModelError(f"direction s = {s} is after t = {t}")
    if i_t > sol.driver.shape[1] - 1:
        raise ModelError("t beyond the solved horizon")
    return i_s, i_t


def derivative_early(sol: SolutionPaths, s, t):
    """D_s X_t for 0 <= s <= t <= r, one value per path."""
    if t > sol.model.delay * (1 + 1e-12):
        raise ModelError("early-regime derivative needs t <= r")
    return derivative_block(sol, s, t, block=(0, sol.model.index(t)))


def derivative_block(sol: SolutionPaths, s, tau, block):
    """D_s X_tau for s, tau inside ``block = (lo, hi)`` grid indices."""
    lo, hi = block
    if hi - lo >= sol.m and not (lo == 0 and hi <= sol.m):
        raise ModelError("block width must be smaller than the delay")
    i_s, i_t = _indices(sol, s, tau)
    if not lo <= i_s <= i_t <= hi:
        raise ModelError("s and tau must lie in the block")
    C = _bprime_integral(sol, i_s, i_t)
    sig = coeffs.evaluate(sol.model.sigma.expr, sol.values[:, i_s])
    return sig * np.exp(C[:, -1])


@dataclass(frozen=True, eq=False)
class DerivativeTable:
    """values[p, j, k] = D_{s_j} X_{tau_k} for grid indices lo..hi (zero below the diagonal)."""

    block: int
    lo: int
    hi: int
    s: np.ndarray
    tau: np.ndarray
    values: np.ndarray

    def step_values(self, k=-1):
        """Cell values (left points) of s -> D_s X_{tau_k} on cells lo..hi-1."""
        kk = self.values.shape[-1] - 1 if k == -1 else k
        return self.values[:, :-1, kk]


def derivative_table(sol: SolutionPaths, lo, hi, block=0) -> DerivativeTable:
    """Full lower-triangular table of D_s X_tau on the block [t_lo, t_hi]."""
    if hi - lo >= sol.m and lo != 0:
        raise ModelError("block width must be smaller than the delay")
    if lo == 0 and hi > sol.m:
        raise ModelError("early-regime table needs t <= r")
    C = _bprime_integral(sol, lo, hi)  # (n, nb+1)
    sig = _sigma_delayed(sol, lo, hi)
    expo = C[:, None, :] - C[:, :, None]  # [p, j, k] = C_k - C_j
    nb = hi - lo + 1
    mask = np.triu(np.ones((nb, nb), dtype=bool))
    vals = np.where(mask, sig[:, :, None] * np.exp(np.where(mask, expo, 0.0)), 0.0)
    t = np.arange(lo, hi + 1) * sol.model.dt
    return DerivativeTable(block=block, lo=lo, hi=hi, s=t, tau=t, values=vals)


def early_step_function(sol: SolutionPaths, t_index):
    """Cell values of s -> D_s X_t on [0, t], left-point convention."""
    C = _bprime_integral(sol, 0, t_index)
    sig = _sigma_delayed(sol, 0, t_index - 1)
    return sig * np.exp(C[:, -1:] - C[:, :-1])


@dataclass(frozen=True, eq=False)
class BlockNorms:
    block: int
    DI_norm2: np.ndarray
    DR_norm2: np.ndarray

    @property
    def Gamma_U_lower(self):
        return self.DI_norm2 / 2.0 - self.DR_norm2


def remainder_derivative(sol: SolutionPaths, lo, hi):
    """Cell values of s -> D_s R_n = int_s^{t_hi} b'(X_u) D_s X_u du (trapezoid)."""
    dt = sol.model.dt
    bp = coeffs.evaluate(sol.model.b.derivative, sol.values[:, sol.m + lo:sol.m + hi + 1])
    tab = derivative_table(sol, lo, hi).values  # [p, j, k]
    integrand = bp[:, None, :] * tab
    nb = hi - lo + 1
    out = np.zeros((sol.n_paths, nb - 1))
    for j in range(nb - 1):
        seg = integrand[:, j, j:]
        out[:, j] = 0.5 * dt * (seg[:, 1:] + seg[:, :-1]).sum(axis=1)
    return out


def block_norms(sol: SolutionPaths, lo, hi, w: CellWeightMatrix, block=0) -> BlockNorms:
    """||D I_n||^2 and ||D R_n||^2 on [t_lo, t_hi] with D_s I_n = sigma(X_{s-r})."""
    if hi - lo >= sol.m:
        raise ModelError("block width must be smaller than the delay")
    if w.n_cells != hi - lo:
        raise ValueError("weight matrix does not match the block")
    DI = _sigma_delayed(sol, lo, hi - 1)
    DR = remainder_derivative(sol, lo, hi)
    return BlockNorms(block=block, DI_norm2=h_norm2(DI, w), DR_norm2=h_norm2(DR, w))


def check_nondegeneracy(norms: BlockNorms, sigma_N2, lam) -> BoundReport:
    """||DI||^2/2 - ||DR||^2 >= lam^2 sigma_N^2 / 4, margins in units of sigma_N^2."""
    if sigma_N2 <= 0:
        raise ValueError("sigma_N^2 must be positive")
    margin = (norms.Gamma_U_lower - lam ** 2 * sigma_N2 / 4.0) / sigma_N2
    return BoundReport(
        name=f"nondegeneracy_block_{norms.block}",
        constants={"sigma_N2": sigma_N2, "lambda": lam},
        points=[],
        margins=np.atleast_1d(margin).tolist(),
        extra={"DI_norm2_min": float(np.min(norms.DI_norm2)),
               "DR_norm2_max": float(np.max(norms.DR_norm2))},
    )


def check_early_bounds(sol: SolutionPaths, t, tol=1e-12) -> BoundReport:
    """Every D_s X_t, 0 <= s <= t <= r, within [lam e^{-Mr}, Lam e^{Mr}]."""
    model = sol.model
    k = model.index(t)
    tab = derivative_table(sol, 0, k)
    lo = model.lam * exp(-model.M * model.delay)
    hi = model.Lam * exp(model.M * model.delay)
    j, kk = np.triu_indices(k + 1)
    vals = tab.values[:, j, kk]
    margin = np.minimum(vals - lo, hi - vals)
    return BoundReport(
        name="der0r",
        constants={"lower": lo, "upper": hi, "t": t},
        points=[],
        margins=margin.min(axis=1).tolist(),
        tolerance=tol,
        extra={"entries": int(vals.size), "min": float(vals.min()), "max": float(vals.max())},
    )


def _partial_bell(n, k, x):
    """Partial Bell polynomial B_{n,k}(x_1, ..., x_{n-k+1}); x[i-1] = x_i."""
    if n == 0 and k == 0:
        return 1.0
    if n == 0 or k == 0:
        return 0.0
    return sum(comb(n - 1, i - 1) * x[i - 1] * _partial_bell(n - i, k - 1, x)
               for i in range(1, n - k + 2))


def derivative_bound_constants(model, order=3, width=None):
    """Uniform bounds C_1..C_order on |D^j X_tau| within one block.

    Order 1 is Lam e^{M w}. For j >= 2 the sigma terms vanish inside a block
    (their directions lie after s_q - r), and Gronwall on the Faa di Bruno
    expansion of D^j b(X_u) gives
    C_j = w e^{M w} sum_{k>=2} ||b^(k)|| B_{j,k}(C_1, ..., C_{j-1}).
    """
    w = model.delay if width is None else width
    lo, hi = model.b.scan_range
    grid = np.linspace(lo, hi, model.b.scan_points)
    sups = []
    d = model.b.expr
    for _ in range(order):
        d = coeffs.differentiate(d)
        sups.append(float(np.max(np.abs(coeffs.evaluate(d, grid)))))
    M = sups[0]
    C = [model.Lam * exp(M * w)]
    for j in range(2, order + 1):
        forcing = sum(sups[k - 1] * _partial_bell(j, k, C) for k in range(2, j + 1))
        C.append(w * forcing * exp(M * w))
    return C
