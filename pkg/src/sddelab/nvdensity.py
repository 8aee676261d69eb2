"""Density of X_t for t <= r from the Malliavin variance proxy g_F.

g_F(F) = int_0^inf e^{-theta} E[<Phi(B), Phi(e^{-theta} B + sqrt(1 - e^{-2 theta}) B')> | F]
with Phi(B)(s) = D_s X_t. Substituting u = e^{-theta} turns the theta
integral into int_0^1 du, done with Gauss-Legendre nodes. Conditioning on F
is a Nadaraya-Watson regression; the density follows from

    p_F(x) = E|F| / (2 g_F(x)) * exp(-int_0^x z / g_F(z) dz).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import exp

import numpy as np

from . import fbm
from .hspace import cell_weights, h_inner
from .malliavin import early_step_function
from .report import BoundReport
from .sdde import ModelError, ModelSpec, mean_and_centering, solve


def silverman_bandwidth(x):
    """0.9 * min(sd, iqr / 1.34) * n^{-1/5}."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if not spread > 0:
        raise ValueError("degenerate sample: zero spread")
    return 0.9 * spread * x.size ** (-0.2)


def _kernel_rows(points, samples, h, chunk=64):
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        z = (p[:, None] - samples[None, :]) / h
        yield lo, np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    points: np.ndarray
    values: np.ndarray
    method: str  # "nv-formula" or "kde"
    bandwidth: float | None = None
    stderr: np.ndarray | None = None


def kde(samples, points, bandwidth=None) -> DensityEstimate:
    """Gaussian KDE with pointwise Monte Carlo standard errors."""
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise ValueError("KDE needs at least 100 samples")
    if not x.std() > 0:
        raise ValueError("degenerate sample: zero variance")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    pts = np.asarray(points, dtype=float)
    vals = np.empty(pts.size)
    se = np.empty(pts.size)
    n = x.size
    for lo, K in _kernel_rows(pts, x, h):
        k = K / h
        vals[lo:lo + len(k)] = k.mean(axis=1)
        se[lo:lo + len(k)] = k.std(axis=1, ddof=1) / np.sqrt(n)
    return DensityEstimate(pts, vals, "kde", h, se)


def nadaraya_watson(x, y, points, bandwidth=None):
    """Gaussian-kernel regression of y on x; returns (fit, stderr, n_eff, bandwidth)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    pts = np.asarray(points, dtype=float)
    fit = np.full(pts.size, np.nan)
    se = np.full(pts.size, np.nan)
    neff = np.zeros(pts.size)
    for lo, K in _kernel_rows(pts, x, h):
        sw = K.sum(axis=1)
        f = (K @ y) / sw
        resid2 = (y[None, :] - f[:, None]) ** 2
        var = (K * K * resid2).sum(axis=1) / sw ** 2
        sl = slice(lo, lo + len(f))
        fit[sl] = f
        se[sl] = np.sqrt(var)
        neff[sl] = sw ** 2 / (K * K).sum(axis=1)
    return fit, se, neff, h


@dataclass(frozen=True, eq=False)
class GfEstimate:
    t: float
    centers: np.ndarray
    gf_values: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    bandwidth: float
    n_paths: int
    theta_nodes: int
    dropped: list = field(default_factory=list)
    F: np.ndarray | None = None  # centred samples X_t - mean
    pairing: np.ndarray | None = None  # per-path theta-integrated pairing
    centering: object = None


def gauss_legendre_unit(n):
    """Nodes and weights for int_0^1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def theta_pairing(model: ModelSpec, t, B, Bc, theta_nodes=16):
    """Per-path int_0^1 <Phi(B), Phi(u B + sqrt(1-u^2) B')>_H du.

    B, Bc are fBm paths on the model grid up to t. Returns the pairing and
    the solution on the original driver.
    """
    K = model.index(t)
    sol = solve(model, B, horizon=t)
    phi = early_step_function(sol, K)
    w = cell_weights(np.arange(K + 1) * model.dt, model.hurst)
    nodes, weights = gauss_legendre_unit(theta_nodes)
    acc = np.zeros(B.shape[0])
    for u, wq in zip(nodes, weights):
        mixed = u * B + np.sqrt(1.0 - u * u) * Bc
        phi_u = early_step_function(solve(model, mixed, horizon=t), K)
        acc += wq * h_inner(phi, phi_u, w)
    return acc, sol


def estimate_gf(model: ModelSpec, t, n_paths, theta_nodes=16, seed=0, *,
                n_bins=41, min_count=1, bandwidth=None, workers=1) -> GfEstimate:
    model.require_elliptic()
    if not 0 < t <= model.delay * (1 + 1e-12):
        raise ModelError("g_F is explicit only for t in (0, r]")
    if theta_nodes < 8:
        raise ValueError("theta_nodes must be >= 8")
    grid = model.time_grid(t)
    factor = fbm.cholesky_factor(grid.times[1:], model.hurst)
    B = fbm.sample(grid, model.hurst, n_paths, seed, stream=0, workers=workers, factor=factor)
    Bc = fbm.sample(grid, model.hurst, n_paths, seed, stream=1, workers=workers, factor=factor)
    pairing, sol = theta_pairing(model, t, B.paths, Bc.paths, theta_nodes)
    cen = mean_and_centering(sol, t)
    F = sol.at(t) - cen.mean
    edges = np.linspace(F.min(), F.max(), n_bins + 1)
    counts, _ = np.histogram(F, edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    keep = counts >= min_count
    dropped = [float(c) for c in centers[~keep]]
    fit, se, _, h = nadaraya_watson(F, pairing, centers[keep], bandwidth)
    return GfEstimate(t=t, centers=centers[keep], gf_values=fit, stderr=se,
                      counts=counts[keep], bandwidth=h, n_paths=n_paths,
                      theta_nodes=theta_nodes, dropped=dropped, F=F,
                      pairing=pairing, centering=cen)


def gf_bracket(model: ModelSpec, t):
    """Population bracket [lam^2 e^{-2Mr} t^{2H}, Lam^2 e^{2Mr} t^{2H}]."""
    s = t ** (2 * model.hurst)
    Mr = model.M * model.delay
    return model.lam ** 2 * exp(-2 * Mr) * s, model.Lam ** 2 * exp(2 * Mr) * s


def check_gf_bracket(model: ModelSpec, gf: GfEstimate, n_se=3.0, min_count=1,
                     tol=1e-12) -> BoundReport:
    """lower <= g_F <= upper within ``n_se`` standard errors on bins holding
    at least ``min_count`` samples. Margins are relative to the upper end."""
    lo, hi = gf_bracket(model, gf.t)
    keep = gf.counts >= min_count
    g, se = gf.gf_values[keep], gf.stderr[keep]
    band = n_se * se
    margin = np.minimum(g - lo + band, hi + band - g)
    return BoundReport(
        name="gf_bracket",
        constants={"lower": lo, "upper": hi, "n_se": n_se, "t": gf.t, "min_count": min_count},
        points=gf.centers[keep].tolist(),
        margins=(margin / hi).tolist(),
        tolerance=tol,
        extra={"all_positive": bool(np.all(gf.gf_values > 0)), "dropped_bins": gf.dropped,
               "sparse_bins": int((~keep).sum()),
               "gf_min": float(g.min()) if g.size else None,
               "gf_max": float(g.max()) if g.size else None},
        notes=["bins are Nadaraya-Watson estimates of E[pairing | F]"],
    )


def density_from_gf(gf: GfEstimate, abs_dev, points, n_fine=4001) -> DensityEstimate:
    """Evaluate E|F|/(2 g(x)) exp(-int_0^x z/g(z) dz) with g linear between bins."""
    if not abs_dev > 0:
        raise ValueError("abs_dev must be positive")
    pts = np.asarray(points, dtype=float)
    c, g = gf.centers, gf.gf_values
    if pts.min() < c[0] - 1e-12 or pts.max() > c[-1] + 1e-12:
        raise ValueError("evaluation point outside the binned range")
    if not (c[0] <= 0.0 <= c[-1]):
        raise ValueError("binned range must contain 0")
    fine = np.union1d(np.linspace(c[0], c[-1], n_fine), np.concatenate([pts, c, [0.0]]))
    integrand = fine / np.interp(fine, c, g)
    cum = np.zeros(fine.size)
    cum[1:] = np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(fine))
    cum -= np.interp(0.0, fine, cum)
    expo = np.interp(pts, fine, cum)
    vals = abs_dev / (2.0 * np.interp(pts, c, g)) * np.exp(-expo)
    return DensityEstimate(pts, vals, "nv-formula")


def verify_early_bounds(model: ModelSpec, t, n_paths, seed=0, *, n_points=101,
                        radius=3.0, n_se=3.0, theta_nodes=16, n_bins=41,
                        with_nv=True, workers=1, swap_constants=False) -> BoundReport:
    """Two-sided envelope check of the KDE of X_t, t in (0, r].

    ``swap_constants`` exchanges sigma_min and sigma_max (negative control).
    """
    model.require_elliptic()
    if not 0 < t <= model.delay * (1 + 1e-12):
        raise ModelError("early bound needs t in (0, r]")
    if with_nv:
        gf = estimate_gf(model, t, n_paths, theta_nodes, seed, n_bins=n_bins, workers=workers)
        cen = gf.centering
        F = gf.F
    else:
        gf = None
        grid = model.time_grid(t)
        B = fbm.sample(grid, model.hurst, n_paths, seed, workers=workers)
        sol = solve(model, B, horizon=t)
        cen = mean_and_centering(sol, t)
        F = sol.at(t) - cen.mean
    tH = t ** model.hurst
    x = cen.mean + np.linspace(-radius * tH, radius * tH, n_points)
    est = kde(F + cen.mean, x)
    smin2, smax2 = gf_bracket(model, t)
    if swap_constants:
        smin2, smax2 = smax2, smin2
    d2 = (x - cen.mean) ** 2
    lower = cen.abs_dev / (2 * smax2) * np.exp(-d2 / (2 * smin2))
    upper = cen.abs_dev / (2 * smin2) * np.exp(-d2 / (2 * smax2))
    band = n_se * est.stderr
    margin = np.minimum(est.values + band - lower, upper - (est.values - band))
    data = {"x": x, "p_kde": est.values, "p_kde_se": est.stderr,
            "lower": lower, "upper": upper}
    extra = {
        "sigma_min2": smin2, "sigma_max2": smax2,
        "mean_hat": cen.mean, "mean_se": cen.mean_se,
        "abs_dev_hat": cen.abs_dev, "abs_dev_se": cen.abs_dev_se,
        "abs_dev_about_eta0": float(np.mean(np.abs(F + cen.mean - model.eta0))),
        "kde_bandwidth": est.bandwidth,
        "collapsed": bool(np.isclose(smin2, smax2, rtol=1e-12)),
    }
    if gf is not None:
        inside = (x - cen.mean >= gf.centers[0]) & (x - cen.mean <= gf.centers[-1])
        p_nv = np.full(x.size, np.nan)
        p_nv[inside] = density_from_gf(gf, cen.abs_dev, x[inside] - cen.mean).values
        data["p_nv"] = p_nv
        data["gf"] = gf
    return BoundReport(
        name="early_two_sided_bound",
        constants={"t": t, "lambda": model.lam, "Lambda": model.Lam, "M": model.M,
                   "r": model.delay, "n_paths": n_paths, "seed": seed, "n_se": n_se},
        points=x.tolist(),
        margins=margin.tolist(),
        extra=extra,
        notes=["F is centred with the Monte Carlo mean; see mean_se for the induced bias"],
        data=data,
    )
