"""Exact fractional Brownian motion on a time grid via dense Cholesky."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .report import BoundReport, fmt

MAX_GRID = 1024
_MASK64 = (1 << 64) - 1


def check_hurst(hurst):
    if not 0.5 < hurst < 1.0:
        raise ValueError(f"Hurst index must lie in (1/2, 1), got {hurst}")


@dataclass(frozen=True)
class Grid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("grid needs at least one time")
        if t[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.isfinite(t)):
            raise ValueError("grid times must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, end, n_steps):
        return cls(np.arange(n_steps + 1) * (end / n_steps))

    @property
    def n(self):
        return self.times.size

    @property
    def is_uniform(self):
        d = np.diff(self.times)
        return d.size == 0 or np.allclose(d, d[0], rtol=1e-12, atol=0)


def covariance(t, s, hurst):
    """fBm covariance (|t|^2H + |s|^2H - |t-s|^2H) / 2, vectorised."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    h2 = 2.0 * hurst
    out = 0.5 * (np.abs(t) ** h2 + np.abs(s) ** h2 - np.abs(t - s) ** h2)
    return out if out.ndim else float(out)


def covariance_matrix(times, hurst):
    t = np.asarray(times, dtype=float)
    return covariance(t[:, None], t[None, :], hurst)


def path_normals(seed, index, n, stream=0):
    """Standard normals for path ``index``; depends on (seed, stream, index) only.

    Philox is counter based, so each path gets a disjoint block of the
    counter space keyed by (seed, stream).
    """
    bg = np.random.Philox(key=[seed & _MASK64, stream & _MASK64],
                          counter=[0, int(index), 0, 0])
    return np.random.Generator(bg).standard_normal(n)


@dataclass(frozen=True, eq=False)
class FbmBatch:
    hurst: float
    grid: Grid
    paths: np.ndarray  # (n_paths, n_times), column 0 is B_0 = 0
    seed: int
    factor: np.ndarray  # Cholesky factor over the positive grid times
    stream: int = 0

    @property
    def n_paths(self):
        return self.paths.shape[0]

    def to_csv(self, path):
        write_paths_csv(path, self.grid.times, self.paths)


def cholesky_factor(times, hurst):
    pos = np.asarray(times, dtype=float)
    cov = covariance_matrix(pos, hurst)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "fBm covariance is not positive definite (duplicate or zero grid times?)"
        ) from exc


def sample(grid: Grid, hurst: float, n_paths: int, seed: int, *,
           stream: int = 0, first_index: int = 0, workers: int = 1,
           factor: np.ndarray | None = None) -> FbmBatch:
    """Draw ``n_paths`` fBm paths on ``grid``.

    Path ``i`` is ``L @ z_i`` with ``z_i`` from :func:`path_normals`, so it
    does not depend on ``n_paths`` or ``workers``.
    """
    check_hurst(hurst)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if grid.n < 2:
        raise ValueError("grid needs at least one positive time")
    if grid.n > MAX_GRID + 1:
        raise ValueError(f"grid larger than {MAX_GRID} points")
    pos = grid.times[1:]
    L = cholesky_factor(pos, hurst) if factor is None else factor
    m = pos.size

    def chunk(lo_hi):
        lo, hi = lo_hi
        out = np.empty((hi - lo, m))
        # one matrix-vector product per path keeps rows bit-identical
        # whatever the chunking
        for k, i in enumerate(range(lo, hi)):
            out[k] = L @ path_normals(seed, first_index + i, m, stream)
        return out

    step = max(1, -(-n_paths // max(1, workers * 4)))
    bounds = [(lo, min(lo + step, n_paths)) for lo in range(0, n_paths, step)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(chunk, bounds))
    else:
        parts = [chunk(b) for b in bounds]
    paths = np.zeros((n_paths, grid.n))
    paths[:, 1:] = np.concatenate(parts, axis=0)
    paths.setflags(write=False)
    return FbmBatch(hurst=hurst, grid=grid, paths=paths, seed=seed, factor=L,
                    stream=stream)


def write_paths_csv(path, times, paths):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"t_{i}" for i in range(len(times))])
        for row in np.asarray(paths):
            w.writerow([fmt(v) for v in row])


def increments_hoelder_check(batch: FbmBatch, gamma: float, n_se: float = 5.0) -> BoundReport:
    """Second-moment ratio E|B_t - B_s|^2 / |t-s|^{2H} over all grid pairs.

    For p = 2 the population ratio is exactly 1; each pair passes when the
    empirical ratio is within ``n_se`` standard errors of 1.
    """
    if not gamma < batch.hurst:
        raise ValueError("gamma must be smaller than the Hurst index")
    t = batch.grid.times
    P = batch.paths
    i, j = np.triu_indices(t.size, k=1)
    margins = []
    ratios = []
    for a, b in zip(i, j):
        inc2 = (P[:, b] - P[:, a]) ** 2
        scale = (t[b] - t[a]) ** (2 * batch.hurst)
        ratio = inc2.mean() / scale
        se = inc2.std(ddof=1) / scale / np.sqrt(P.shape[0])
        ratios.append(ratio)
        margins.append(n_se * se - abs(ratio - 1.0))
    margins = np.array(margins)
    return BoundReport(
        name="fbm_increment_moments",
        constants={"hurst": batch.hurst, "gamma": gamma, "p": 2, "n_se": n_se},
        points=np.column_stack([t[i], t[j]]).tolist(),
        margins=margins.tolist(),
        extra={"ratio_min": float(np.min(ratios)), "ratio_max": float(np.max(ratios))},
    )
