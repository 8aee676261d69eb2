"""Lower-bound machinery for t in (r, T]: block partition, waypoint chain,
constant feasibility, and path-level checks of the block estimates.

Convention: blocks are uniform, Delta = t/N, and sigma_N = Delta^H, so the
alpha_H-normalised H-norm of the unit function on a block is exactly
sigma_N^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, exp, isfinite, log, pi, sqrt

import numpy as np

from . import coeffs, fbm
from .hspace import cell_weights, h_norm2
from .malliavin import block_norms, check_nondegeneracy
from .nvdensity import kde
from .report import BoundReport
from .sdde import ModelError, ModelSpec, SolutionPaths, solve


class PlanError(ValueError):
    pass


def j1_prefactor(Lam):
    """c in the chained bound, read off the J_1 Gaussian floor: (2 pi Lam^2)^{-1/2}."""
    return 1.0 / sqrt(2.0 * pi * Lam ** 2)


def max_feasible_c1(lam):
    """Largest c1 with exp(-8 c1^2 / lam^2) >= 1/2."""
    return lam * sqrt(log(2.0) / 8.0)


def default_constants(lam, shrink=0.99):
    """(c1, c2) meeting every constraint: c1 just inside its cap, c2 = ceil(1/c1^2)."""
    c1 = shrink * max_feasible_c1(lam)
    c2 = float(ceil(1.0 / c1 ** 2))
    return c1, c2


@dataclass(frozen=True)
class Partition:
    t: float
    N: int
    hurst: float

    @property
    def delta(self):
        return self.t / self.N

    @property
    def sigma_N(self):
        return self.delta ** self.hurst

    def edges(self):
        return np.arange(self.N + 1) * self.delta

    def grid_blocks(self, dt):
        """Block boundaries as grid indices; the step must divide Delta."""
        cells = self.delta / dt
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise PlanError(f"block width {self.delta} is not a multiple of the grid step {dt}")
        c = int(round(cells))
        return [(n * c, (n + 1) * c) for n in range(self.N)]


@dataclass(frozen=True, eq=False)
class ChainPlan:
    t: float
    x: float
    eta0: float
    hurst: float
    N: int
    lam: float
    Lam: float
    c: float
    c1: float
    c2: float
    waypoints: np.ndarray
    constraints: dict = field(default_factory=dict)
    raised_to_delay: bool = False  # N lifted so that t/N < r

    @property
    def delta(self):
        return self.t / self.N

    @property
    def sigma_N(self):
        return self.delta ** self.hurst

    @property
    def radius(self):
        return self.c1 * self.sigma_N

    @property
    def rho(self):
        return -log(self.c * self.c1 / 4.0)

    @property
    def feasible(self):
        return all(self.constraints.values())

    def to_dict(self):
        step = abs(self.x - self.eta0) / self.N
        return {
            "t": self.t, "x": self.x, "eta0": self.eta0, "hurst": self.hurst,
            "N": self.N, "delta": self.delta, "sigma_N": self.sigma_N,
            "lambda": self.lam, "Lambda": self.Lam,
            "c": self.c, "c1": self.c1, "c2": self.c2, "rho": self.rho,
            "radius": self.radius,
            "constraints": dict(self.constraints),
            "feasible": self.feasible,
            "N_raised_to_delay_minimum": self.raised_to_delay,
            "waypoint_step": step,
            "waypoint_step_over_radius": step / self.radius,
            "sigma_N_over_sqrt_c2": self.sigma_N / sqrt(self.c2),
            "sigma_N_variance_split": sqrt(self.t ** (2 * self.hurst) / self.N),
            "notes": [
                "sigma_N = (t/N)^H (uniform blocks); the alpha_H t^{2H}/N form is not "
                "compatible with equal block widths",
                "c is identified with the J1 Gaussian prefactor (2 pi Lambda^2)^{-1/2}",
            ],
        }


def plan_chain(model: ModelSpec, t, x, c1=None, c2=None) -> ChainPlan:
    if t <= model.delay:
        raise PlanError("the chain is for t > r")
    d1, d2 = default_constants(model.lam)
    c1 = d1 if c1 is None else float(c1)
    c2 = d2 if c2 is None else float(c2)
    if not (c1 > 0 and c2 > 0):
        raise PlanError("c1 and c2 must be positive")
    H = model.hurst
    target = c2 * (x - model.eta0) ** 2 / t ** (2 * H)
    N = max(1, ceil(target - 1e-9))
    # blocks must be narrower than the delay; more blocks only shorten the waypoint steps
    n_min = int(t // model.delay) + 1
    raised = N < n_min
    N = max(N, n_min)
    c = j1_prefactor(model.Lam)
    rho_arg = c * c1 / 4.0
    rho = -log(rho_arg) if rho_arg > 0 else float("nan")
    constraints = {
        "c1_gaussian_floor": exp(-8 * c1 ** 2 / model.lam ** 2) >= 0.5,
        "rho_positive": rho > 0,
        # log form: N rho^N overflows for large N
        "N_rho_N_at_least_1": bool(rho > 0 and log(N) + N * log(rho) >= 0.0),
        "waypoint_step_fits": 1.0 / sqrt(c2) <= c1,
    }
    n = np.arange(N + 1)
    y = model.eta0 + n / N * (x - model.eta0)
    y[-1] = x
    return ChainPlan(t=t, x=x, eta0=model.eta0, hurst=H, N=N, lam=model.lam,
                     Lam=model.Lam, c=c, c1=c1, c2=c2, waypoints=y,
                     constraints=constraints, raised_to_delay=raised)


def chain_log_bounds(plan: ChainPlan):
    """Natural logs of the (chained, simplified) bounds; finite when the bounds underflow."""
    if not plan.feasible:
        bad = [k for k, v in plan.constraints.items() if not v]
        raise PlanError(f"infeasible plan: {', '.join(bad)}")
    pre = -log(plan.c1) - plan.hurst * log(plan.t)
    chained = pre + plan.N * log(plan.c * plan.c1 / 4.0) + 0.5 * log(plan.N)
    simplified = pre - plan.rho * plan.N
    return chained, simplified


def chain_lower_bound(plan: ChainPlan):
    """(chained, simplified) lower bounds for p_t(x).

    chained    = exp(N log(c c1/4) + log(N)/2) / (c1 t^H)
    simplified = exp(-rho N) / (c1 t^H), with N the integer block count
    """
    lc, ls = chain_log_bounds(plan)
    return exp(lc), exp(ls)


# --- path-level checks ------------------------------------------------------

def _sigma_blocks(sol, blocks):
    vals = coeffs.evaluate(sol.model.sigma.expr, sol.values[:, :blocks[-1][1]])
    return [vals[:, lo:hi] for lo, hi in blocks]


def j1_variance_bracket(sol: SolutionPaths, part: Partition, c1=None, tol=1e-10) -> BoundReport:
    """lam^2 sigma_N^2 <= ||sigma(X_{.-r})||^2_{H[block]} <= Lam^2 sigma_N^2 on every block.

    Also checks that the conditional Gaussian density with variance v_n stays
    above the J_1 floor (2 pi Lam^2 sigma_N^2)^{-1/2} exp(-d^2/(2 lam^2 sigma_N^2))
    at distances d in [0, 4 c1 sigma_N], and that this floor is >= half its
    peak there.
    """
    model = sol.model
    lam, Lam = model.lam, model.Lam
    c1 = default_constants(lam)[0] if c1 is None else c1
    blocks = part.grid_blocks(model.dt)
    if blocks[0][1] - blocks[0][0] >= sol.m:
        raise PlanError("block width must be smaller than the delay")
    s2 = part.sigma_N ** 2
    nb = blocks[0][1] - blocks[0][0]
    w = cell_weights(np.arange(nb + 1) * model.dt, model.hurst)
    sig = _sigma_blocks(sol, blocks)
    v = np.stack([h_norm2(sv, w) for sv in sig], axis=1)  # (paths, N)
    ratio = v / s2
    m_lo = ratio - lam ** 2
    m_hi = Lam ** 2 - ratio
    # J1 floor consistency
    d = np.linspace(0.0, 4.0 * c1 * part.sigma_N, 9)
    peak = 1.0 / sqrt(2 * pi * Lam ** 2 * s2)
    floor = peak * np.exp(-d ** 2 / (2 * lam ** 2 * s2))
    vv = v[..., None]
    dens = np.exp(-d ** 2 / (2 * vv)) / np.sqrt(2 * pi * vv)
    m_floor = ((dens - floor) / peak).min(axis=-1)
    m_half = float((floor.min() - peak / 2) / peak)
    margins = np.minimum(np.minimum(m_lo, m_hi), m_floor).min(axis=0)
    visited = max(float((s ** 2).max()) for s in sig)
    tight = float(ratio.max() / visited)
    return BoundReport(
        name=f"j1_bracket_N{part.N}",
        constants={"t": part.t, "N": part.N, "delta": part.delta, "sigma_N2": s2,
                   "lambda": lam, "Lambda": Lam, "c1": c1},
        points=list(range(1, part.N + 1)),
        margins=margins.tolist() + [m_half],
        tolerance=tol,
        extra={"v_over_sigmaN2_min": float(ratio.min()),
               "v_over_sigmaN2_max": float(ratio.max()),
               "max_visited_sigma2": visited, "tightness": tight},
        data={"v_min": v.min(axis=0), "v_max": v.max(axis=0),
              "bracket_lo": lam ** 2 * s2, "bracket_hi": Lam ** 2 * s2},
    )


def block_remainders(sol: SolutionPaths, part: Partition):
    """R_n = int_{block} b(X_s) ds by the trapezoid rule, shape (paths, N)."""
    blocks = part.grid_blocks(sol.model.dt)
    bx = coeffs.evaluate(sol.model.b.expr, sol.values[:, sol.m:sol.m + blocks[-1][1] + 1])
    dt = sol.model.dt
    out = np.empty((sol.n_paths, part.N))
    for n, (lo, hi) in enumerate(blocks):
        seg = bx[:, lo:hi + 1]
        out[:, n] = 0.5 * dt * (seg[:, 1:] + seg[:, :-1]).sum(axis=1)
    return out


def loglog_slope(x, y):
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def rn_smallness(sol: SolutionPaths, t, Ns, slope_range=(0.9, 1.1), tol=1e-12) -> BoundReport:
    """|R_n| <= ||b||_inf Delta for every path and block, plus the refinement slope.

    Margins: (||b|| Delta - |R_n|)/Delta per (N, block), then the slope margin
    min(slope - lo, hi - slope) when at least two N values are given.
    """
    model = sol.model
    bsup = model.b_sup
    margins, maxes, deltas = [], [], []
    for N in Ns:
        part = Partition(t, N, model.hurst)
        R = block_remainders(sol, part)
        margins.extend(((bsup * part.delta - np.abs(R)) / part.delta).min(axis=0).tolist())
        maxes.append(float(np.abs(R).max()))
        deltas.append(part.delta)
    extra = {"max_abs_R": dict(zip(map(str, Ns), maxes)), "b_sup": bsup}
    if len(Ns) >= 2 and min(maxes) > 0:
        slope = loglog_slope(deltas, maxes)
        extra["slope"] = slope
        margins.append(min(slope - slope_range[0], slope_range[1] - slope))
    elif max(maxes) == 0:
        extra["slope"] = None
    return BoundReport(
        name="rn_smallness",
        constants={"t": t, "N_values": list(Ns), "slope_range": list(slope_range)},
        points=[],
        margins=margins,
        tolerance=tol,
        extra=extra,
    )


def nondegeneracy_scan(sol: SolutionPaths, t, Ns, lam=None):
    """Check ||DI||^2/2 - ||DR||^2 >= lam^2 sigma_N^2/4 on every block for each N.

    Returns (report, N0) where N0 is the smallest N in ``Ns`` from which every
    larger N in the list passes (None if the largest fails).
    """
    model = sol.model
    lam = model.lam if lam is None else lam
    verdicts = {}
    worst = {}
    for N in sorted(Ns):
        part = Partition(t, N, model.hurst)
        blocks = part.grid_blocks(model.dt)
        nb = blocks[0][1] - blocks[0][0]
        w = cell_weights(np.arange(nb + 1) * model.dt, model.hurst)
        reps = [check_nondegeneracy(block_norms(sol, lo, hi, w, block=n + 1),
                                    part.sigma_N ** 2, lam)
                for n, (lo, hi) in enumerate(blocks)]
        verdicts[N] = all(r.passed for r in reps)
        worst[N] = min(r.worst_margin for r in reps)
    N0 = None
    for N in sorted(Ns, reverse=True):
        if not verdicts[N]:
            break
        N0 = N
    margins = [worst[N] for N in sorted(Ns) if N0 is not None and N >= N0]
    report = BoundReport(
        name="nondegeneracy",
        constants={"t": t, "N_values": sorted(Ns), "lambda": lam},
        points=[N for N in sorted(Ns) if N0 is not None and N >= N0],
        margins=margins,
        extra={"N0": N0, "pass_by_N": {str(k): v for k, v in verdicts.items()},
               "worst_margin_by_N": {str(k): v for k, v in worst.items()}},
    )
    return report, N0


def j1_minus_j2_threshold(sol: SolutionPaths, t, Ns, c1=None):
    """Smallest N (in Ns) from which the J_1 floor beats a first-order
    shift bound for R_n at every larger N in the list.

    J_1 floor at distance <= 4 c1 sigma_N:  (2 pi Lam^2 sigma_N^2)^{-1/2} exp(-8 c1^2/lam^2)
    shift proxy:  max|R_n| * sup|phi'_v| <= max|R_n| / (sqrt(2 pi e) lam^2 sigma_N^2)
    """
    model = sol.model
    lam, Lam = model.lam, model.Lam
    c1 = default_constants(lam)[0] if c1 is None else c1
    rows = {}
    for N in sorted(Ns):
        part = Partition(t, N, model.hurst)
        s2 = part.sigma_N ** 2
        R = float(np.abs(block_remainders(sol, part)).max())
        j1 = exp(-8 * c1 ** 2 / lam ** 2) / sqrt(2 * pi * Lam ** 2 * s2)
        j2 = R / (sqrt(2 * pi * exp(1)) * lam ** 2 * s2)
        rows[N] = (j1, j2)
    thr = None
    for N in sorted(Ns, reverse=True):
        if rows[N][0] - rows[N][1] <= 0:
            break
        thr = N
    return thr, {str(k): {"j1_floor": a, "j2_proxy": b} for k, (a, b) in rows.items()}


# --- empirical late-regime bound -------------------------------------------

def feasibility_search(x, p_lower, eta0, t, hurst, c3_grid=None, c4_grid=None):
    """All (c3, c4) with c3/t^H exp(-c4 (x-eta0)^2/t^{2H}) <= p_lower(x) everywhere."""
    c3_grid = np.logspace(-6, 0, 32) if c3_grid is None else np.asarray(c3_grid)
    c4_grid = np.logspace(-2, 3, 32) if c4_grid is None else np.asarray(c4_grid)
    u = (np.asarray(x) - eta0) ** 2 / t ** (2 * hurst)
    floor = (c3_grid[:, None, None] / t ** hurst) * np.exp(-c4_grid[None, :, None] * u[None, None, :])
    ok = np.all(floor <= np.asarray(p_lower)[None, None, :], axis=-1)  # (n3, n4)
    best = None
    if ok.any():
        j = int(np.argmax(ok.any(axis=0)))  # smallest feasible c4
        i = int(np.nonzero(ok[:, j])[0].max())  # largest c3 at that c4
        best = (float(c3_grid[i]), float(c4_grid[j]))
    return ok, best, c3_grid, c4_grid


def gaussian_shape_fit(x, p, eta0, t, hurst):
    """Least squares of -log p on (x-eta0)^2/t^{2H}; returns (slope, intercept, r2)."""
    u = (np.asarray(x) - eta0) ** 2 / t ** (2 * hurst)
    y = -np.log(np.asarray(p))
    A = np.column_stack([u, np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else float("nan")
    return float(coef[0]), float(coef[1]), r2


def simulate(model: ModelSpec, t, n_paths, seed, workers=1, stream=0):
    grid = model.time_grid(t)
    B = fbm.sample(grid, model.hurst, n_paths, seed, stream=stream, workers=workers)
    return solve(model, B, horizon=t)


def verify_late_bound(model: ModelSpec, t, n_paths, seed=0, *, x_range=None,
                      n_points=101, radius=3.0, n_se=3.0, shape_radius=2.0,
                      r2_min=0.9, c3_grid=None, c4_grid=None, sol=None,
                      workers=1) -> BoundReport:
    """KDE positivity, (c3, c4) feasibility and Gaussian shape of p_t, t in (r, T].

    Points outside the sampled range are flagged and excluded.
    """
    model.require_elliptic()
    if not model.delay < t <= model.horizon + 1e-12:
        raise ModelError("late bound needs t in (r, T]")
    if sol is None:
        sol = simulate(model, t, n_paths, seed, workers)
    X = sol.at(t)
    tH = t ** model.hurst
    if x_range is None:
        x = model.eta0 + np.linspace(-radius * tH, radius * tH, n_points)
    else:
        x = np.linspace(x_range[0], x_range[1], n_points)
    if x.size == 0:
        raise ValueError("empty evaluation range")
    supported = (x >= X.min()) & (x <= X.max())
    excluded = x[~supported].tolist()
    xs = x[supported]
    if xs.size == 0:
        raise ValueError("no evaluation point inside the sampled support")
    est = kde(X, xs)
    p_low = est.values - n_se * est.stderr
    positivity = p_low / est.values.max()
    ok, best, c3g, c4g = feasibility_search(xs, p_low, model.eta0, t, model.hurst, c3_grid, c4_grid)
    central = np.abs(xs - model.eta0) <= shape_radius * tH
    slope, icpt, r2 = gaussian_shape_fit(xs[central], est.values[central], model.eta0, t, model.hurst)
    var_hat = float(X.var(ddof=1))
    shape_ok = isfinite(slope) and slope > 0 and r2 >= r2_min
    margins = positivity.tolist()
    margins.append(1.0 if best is not None else -1.0)
    margins.append(1.0 if shape_ok else -1.0)
    c3, c4 = best if best is not None else (None, None)
    floor = (c3 / tH) * np.exp(-c4 * (xs - model.eta0) ** 2 / tH ** 2) if best else np.zeros_like(xs)
    return BoundReport(
        name="late_lower_bound",
        constants={"t": t, "n_paths": n_paths, "seed": seed, "n_se": n_se,
                   "r2_min": r2_min, "eta0": model.eta0},
        points=xs.tolist(),
        margins=margins,
        extra={
            "positivity_pass": bool(np.all(p_low > 0)),
            "feasible_pairs": int(ok.sum()),
            "c3": c3, "c4": c4,
            "shape_slope": slope, "shape_intercept": icpt, "shape_r2": r2,
            "gaussian_slope_reference": t ** (2 * model.hurst) / (2 * var_hat),
            "var_hat": var_hat, "mean_hat": float(X.mean()),
            "excluded_points": excluded,
            "kde_bandwidth": est.bandwidth,
        },
        notes=["margins: one positivity margin per point (p_kde - n_se*se, scaled by max p_kde), "
               "then feasibility (+1/-1), then shape (+1/-1)"],
        data={"x": xs, "p_kde": est.values, "p_kde_se": est.stderr, "floor": floor,
              "feasible": ok, "c3_grid": c3g, "c4_grid": c4g},
    )
