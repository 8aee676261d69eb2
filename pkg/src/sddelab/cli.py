"""Command line entry point: ``sddelab <command> ...``.

Exit codes: 0 every check passed, 1 some check failed, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, config, fbm, khbound, malliavin, nvdensity, report, svg
from .coeffs import ExpressionError
from .hspace import check_lemma_ap1, check_lemma_ap2
from .sdde import ModelError, mean_and_centering, solve

ENV_OUT = "SDDELAB_OUT"
DEFAULT_OUT = "sddelab_out"

EARLY_CHECKS = ("der0r", "gf_bracket", "early_bound")
LATE_CHECKS = ("j1_bracket", "rn_smallness", "nondegeneracy", "late_lower_bound", "kh_constraints")


class UsageError(Exception):
    pass


class Run:
    """Output directory, verdicts and timings of one command."""

    def __init__(self, command, out, cfg=None, seed=None, formats=("csv", "json")):
        self.command = command
        self.out = out
        self.cfg = cfg
        self.seed = seed
        self.formats = set(formats)
        self.reports = []
        self.timings = []
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def timed(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        self.timings.append((label, time.perf_counter() - t0))
        return res

    def add(self, rep):
        self.reports.append(rep)
        print(rep.summary(), flush=True)
        return rep

    def json(self, name, obj):
        if "json" in self.formats:
            report.write_json(self.path(name), obj)

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            report.write_csv(self.path(name), header, rows)

    @property
    def svg(self):
        return "svg" in self.formats

    def finish(self):
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "config_sha256": self.cfg.digest() if self.cfg is not None else None,
            "config": self.cfg.as_dict() if self.cfg is not None else None,
            "checks": {r.name: {"passed": r.passed, "violations": r.violations,
                                "worst_margin": r.worst_margin} for r in self.reports},
            "passed": all(r.passed for r in self.reports),
            "timings_file": "timings.txt",
        }
        report.write_json(self.path("manifest.json"), manifest)
        with open(self.path("timings.txt"), "w", newline="\n") as fh:
            for label, sec in self.timings:
                fh.write(f"{label}\t{sec:.3f}\n")
        ok = manifest["passed"]
        print(f"{'PASS' if ok else 'FAIL'} {self.command}: {len(self.reports)} checks, "
              f"outputs in {self.out}")
        return 0 if ok else 1


# --- helpers ----------------------------------------------------------------

def _out_dir(args, cfg=None):
    if getattr(args, "out", None):
        return args.out
    if cfg is not None and cfg.output.directory:
        return cfg.output.directory
    return os.environ.get(ENV_OUT) or DEFAULT_OUT


def _load(args):
    overrides = list(args.set or [])
    if args.paths is not None:
        overrides.append(f"simulation.paths={args.paths}")
    if args.seed is not None:
        overrides.append(f"simulation.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"simulation.workers={args.workers}")
    cfg = config.load(args.config, overrides=overrides)
    if args.svg and "svg" not in cfg.output.formats:
        cfg.output.formats = list(cfg.output.formats) + ["svg"]
    model = cfg.build_model()
    run = Run(args.command, _out_dir(args, cfg), cfg, cfg.simulation.seed, cfg.output.formats)
    return cfg, model, run


def _selected(cfg, names):
    wanted = [c for c in cfg.verification.checks if c not in ("early", "late", "all")]
    chosen = [n for n in names if n in wanted]
    unknown = [c for c in wanted if c not in EARLY_CHECKS + LATE_CHECKS]
    if unknown:
        raise UsageError(f"unknown check(s) in verification.checks: {', '.join(unknown)}")
    return chosen or list(names)


def _t(args, default):
    return default if args.t is None else args.t


def _gf_rows(gf):
    return [(c, g, s, int(n)) for c, g, s, n in zip(gf.centers, gf.gf_values, gf.stderr, gf.counts)]


# --- commands ---------------------------------------------------------------

def cmd_check_lemmas(args):
    if not 0.5 < args.h < 1.0:
        raise UsageError(f"--h {args.h} must lie in (0.5, 1)")
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    run = Run("check-lemmas", _out_dir(args), seed=args.seed)
    ap1 = run.timed("lemma_ap1", check_lemma_ap1, trials=args.trials, dim=args.dim,
                    seed=args.seed, hurst=args.h, tol=args.tol)
    run.add(ap1)
    rng = np.random.default_rng(args.seed)
    parts = []
    for k in range(args.intervals):
        a = float(rng.uniform(0.0, 5.0))
        b = a + float(rng.uniform(0.01, 5.0))
        parts.append(check_lemma_ap2(a, b, args.h, n_cells=16, tol=args.tol, seed=args.seed + k + 1))
    ap2 = report.combine("lemma_ap2", parts,
                         extra={"max_rel_error": max(p.extra["rel_error"] for p in parts)})
    ap2.name = "lemma_ap2"
    run.add(ap2)
    run.json("lemmas.json", {"lemma_ap1": ap1.to_dict(), "lemma_ap2": ap2.to_dict()})
    return run.finish()


def cmd_simulate(args):
    cfg, model, run = _load(args)
    t = _t(args, model.horizon)
    grid = model.time_grid(t)
    n = cfg.simulation.paths
    B = run.timed("sample", fbm.sample, grid, model.hurst, n, cfg.simulation.seed,
                  workers=cfg.workers)
    sol = run.timed("solve", solve, model, B)
    # |X_{k+1} - X_k| <= Lambda |dB| + ||b|| dt on every step
    dX = np.abs(np.diff(sol.values[:, sol.m:], axis=1))
    cap = model.Lam * np.abs(np.diff(B.paths, axis=1)) + model.b_sup * model.dt
    inc = report.BoundReport(
        name="increment_bound", constants={"Lambda": model.Lam, "b_sup": model.b_sup},
        points=[], margins=((cap - dX) / (cap + 1e-300)).min(axis=0).tolist(), tolerance=1e-9)
    run.add(inc)
    run.add(fbm.increments_hoelder_check(B, gamma=0.5 * (0.5 + model.hurst)))
    rows = []
    for k in range(grid.n):
        tk = float(grid.times[k])
        c = mean_and_centering(sol, tk)
        rows.append((tk, c.mean, c.abs_dev, c.mean_se, c.abs_dev_se))
    run.csv("moments.csv", ["t", "mean", "abs_dev", "mean_se", "abs_dev_se"], rows)
    k = min(args.dump_paths, n)
    if k > 0:
        fbm.write_paths_csv(run.path("fbm_paths.csv"), grid.times, B.paths[:k])
        head = solve(model, B.paths[:k])
        head.to_csv(run.path("paths.csv"))
    run.json("simulate.json", {"increment_bound": inc.to_dict(), "t": t, "n_paths": n,
                               "final_mean": rows[-1][1], "final_abs_dev": rows[-1][2]})
    if run.svg:
        arr = np.array(rows)
        svg.line_chart(run.path("moments.svg"), arr[:, 0], {"mean": arr[:, 1], "E|X-m|": arr[:, 2]},
                       title="moments of X_t", xlabel="t")
    return run.finish()


def _gf(cfg, model, run, t):
    v = cfg.verification
    gf = run.timed("gf", nvdensity.estimate_gf, model, t, cfg.simulation.paths, v.theta_nodes,
                   cfg.simulation.seed, n_bins=v.bins, workers=cfg.workers)
    run.csv("gf.csv", ["bin_center", "gf_hat", "stderr", "n_in_bin"], _gf_rows(gf))
    return gf


def cmd_gf(args):
    cfg, model, run = _load(args)
    t = _t(args, cfg.verification.t_early)
    gf = _gf(cfg, model, run, t)
    rep = run.add(nvdensity.check_gf_bracket(model, gf, cfg.verification.n_se,
                                           cfg.verification.min_bin_count))
    run.json("gf.json", rep.to_dict())
    if run.svg:
        lo, hi = nvdensity.gf_bracket(model, t)
        one = np.ones_like(gf.centers)
        svg.line_chart(run.path("gf.svg"), gf.centers, {"g_F": gf.gf_values, "lower": lo * one,
                                                      "upper": hi * one},
                       title=f"g_F at t={t}", xlabel="x - m_t")
    return run.finish()


def _early(cfg, model, run, t, with_nv):
    v = cfg.verification
    rep = run.timed("early_bound", nvdensity.verify_early_bounds, model, t, cfg.simulation.paths,
                    cfg.simulation.seed, n_points=v.points, radius=v.x_radius, n_se=v.n_se,
                    theta_nodes=v.theta_nodes, n_bins=v.bins, with_nv=with_nv,
                    workers=cfg.workers)
    d = rep.data
    p_nv = d.get("p_nv", np.full(d["x"].size, np.nan))
    run.csv("density.csv", ["x", "p_nv", "p_kde", "lower", "upper"],
            zip(d["x"], p_nv, d["p_kde"], d["lower"], d["upper"]))
    if run.svg:
        svg.line_chart(run.path("density.svg"), d["x"],
                       {"p_nv": p_nv, "p_kde": d["p_kde"], "lower": d["lower"], "upper": d["upper"],
                        "p_kde+3se": d["p_kde"] + v.n_se * d["p_kde_se"]},
                       title=f"density of X_t, t={t}", xlabel="x")
    return rep


def cmd_density(args):
    cfg, model, run = _load(args)
    t = _t(args, cfg.verification.t_early)
    rep = _early(cfg, model, run, t, with_nv=True)
    gf = rep.data["gf"]
    run.csv("gf.csv", ["bin_center", "gf_hat", "stderr", "n_in_bin"], _gf_rows(gf))
    p_nv = rep.data["p_nv"]
    ok = np.isfinite(p_nv)
    pos = report.BoundReport(
        name="nv_density_positive", constants={"t": t},
        points=rep.data["x"][ok].tolist(), margins=(p_nv[ok] / np.nanmax(p_nv)).tolist(),
        extra={"gf_positive": bool(np.all(gf.gf_values > 0))})
    run.add(pos)
    run.json("density.json", {"nv_density_positive": pos.to_dict(), "early_bound": rep.to_dict()})
    return run.finish()


def cmd_verify_early(args):
    cfg, model, run = _load(args)
    t = _t(args, cfg.verification.t_early)
    if not 0 < t <= model.delay:
        raise UsageError(f"verify-early needs t in (0, r]; got t = {t}")
    model.require_elliptic()
    checks = _selected(cfg, EARLY_CHECKS)
    out = {}
    if "der0r" in checks:
        sol = run.timed("der0r_solve", khbound.simulate, model, t,
                        min(cfg.verification.kh_paths, cfg.simulation.paths),
                        cfg.simulation.seed, cfg.workers)
        out["der0r"] = run.add(run.timed("der0r", malliavin.check_early_bounds, sol, t)).to_dict()
    need_nv = "gf_bracket" in checks
    if need_nv or "early_bound" in checks:
        rep = _early(cfg, model, run, t, with_nv=need_nv)
        if need_nv:
            gf = rep.data["gf"]
            run.csv("gf.csv", ["bin_center", "gf_hat", "stderr", "n_in_bin"], _gf_rows(gf))
            out["gf_bracket"] = run.add(
                nvdensity.check_gf_bracket(model, gf, cfg.verification.n_se,
                                           cfg.verification.min_bin_count)).to_dict()
        if "early_bound" in checks:
            out["early_bound"] = run.add(rep).to_dict()
    run.json("early.json", out)
    return run.finish()


def _plan(cfg, model, t, x):
    v = cfg.verification
    plan = khbound.plan_chain(model, t, x, v.c1, v.c2)
    bounds = None
    if plan.feasible:
        chained, simplified = khbound.chain_lower_bound(plan)
        lc, ls = khbound.chain_log_bounds(plan)
        bounds = {"chained": chained, "simplified": simplified,
                  "log_chained": lc, "log_simplified": ls}
    d = plan.to_dict()
    d["lower_bounds"] = bounds
    rep = report.BoundReport(
        name="kh_constraints", constants={"t": t, "x": x, "c1": plan.c1, "c2": plan.c2},
        points=list(plan.constraints), margins=[1.0 if ok else -1.0 for ok in plan.constraints.values()],
        extra={"N": plan.N, "rho": plan.rho})
    return plan, d, rep


def _x_target(args, cfg, model, t):
    if args.x is not None:
        return args.x
    if cfg.verification.x_target is not None:
        return cfg.verification.x_target
    return model.eta0 + cfg.verification.x_radius * t ** model.hurst


def cmd_kh_constants(args):
    cfg, model, run = _load(args)
    t = _t(args, cfg.verification.t_late)
    x = _x_target(args, cfg, model, t)
    plan, d, rep = _plan(cfg, model, t, x)
    run.add(rep)
    d["waypoints"] = plan.waypoints
    run.json("kh_plan.json", d)
    print(f"N = {plan.N}, c1 = {plan.c1:.6g}, c2 = {plan.c2:.6g}, rho = {plan.rho:.6g}")
    if d["lower_bounds"]:
        print(f"chained bound {d['lower_bounds']['chained']:.6g}, "
              f"simplified {d['lower_bounds']['simplified']:.6g}")
    return run.finish()


def cmd_verify_late(args):
    cfg, model, run = _load(args)
    v = cfg.verification
    t = _t(args, v.t_late)
    if not model.delay < t <= model.horizon + 1e-12:
        raise UsageError(f"verify-late needs r < t <= T; got t = {t}")
    model.require_elliptic()
    checks = _selected(cfg, LATE_CHECKS)
    Ns = [int(n) for n in v.n_values]
    for N in Ns:
        khbound.Partition(t, N, model.hurst).grid_blocks(model.dt)
        if t / N >= model.delay:
            raise UsageError(f"N = {N} gives block width {t / N} >= r")
    out = {}
    if {"j1_bracket", "rn_smallness", "nondegeneracy"} & set(checks):
        sol = run.timed("kh_solve", khbound.simulate, model, t, min(v.kh_paths, cfg.simulation.paths),
                        cfg.simulation.seed, cfg.workers)
    if "j1_bracket" in checks:
        reps, rows = [], []
        for N in Ns:
            r = khbound.j1_variance_bracket(sol, khbound.Partition(t, N, model.hurst), v.c1)
            reps.append(r)
            for n in range(N):
                rows.append((N, n + 1, r.data["v_min"][n], r.data["v_max"][n],
                             r.data["bracket_lo"], r.data["bracket_hi"]))
        j1 = report.combine("j1_bracket", reps)
        run.add(j1)
        run.csv("j1_bracket.csv", ["N", "n", "v_n_min", "v_n_max", "bracket_lo", "bracket_hi"], rows)
        out["j1_bracket"] = {r.name: r.to_dict() for r in reps}
    if "rn_smallness" in checks:
        out["rn_smallness"] = run.add(khbound.rn_smallness(sol, t, Ns)).to_dict()
    if "nondegeneracy" in checks:
        rep, N0 = run.timed("nondegeneracy", khbound.nondegeneracy_scan, sol, t, Ns)
        thr, rows = khbound.j1_minus_j2_threshold(sol, t, Ns, v.c1)
        rep.extra["j1_minus_j2_threshold"] = thr
        rep.extra["j1_vs_j2"] = rows
        out["nondegeneracy"] = run.add(rep).to_dict()
    if "late_lower_bound" in checks:
        rep = run.timed("late_bound", khbound.verify_late_bound, model, t, cfg.simulation.paths,
                        cfg.simulation.seed, n_points=v.points, radius=v.x_radius, n_se=v.n_se,
                        workers=cfg.workers)
        run.add(rep)
        d = rep.data
        margin = d["p_kde"] - v.n_se * d["p_kde_se"] - d["floor"]
        run.csv("late_floor.csv", ["x", "p_kde", "floor", "margin"],
                zip(d["x"], d["p_kde"], d["floor"], margin))
        feas = {
            "c3_grid": d["c3_grid"], "c4_grid": d["c4_grid"],
            "feasible": d["feasible"].astype(int),
            "best": {"c3": rep.extra["c3"], "c4": rep.extra["c4"]},
            "n_feasible": rep.extra["feasible_pairs"],
        }
        if "kh_constraints" in checks:
            plan, pd, _ = _plan(cfg, model, t, _x_target(args, cfg, model, t))
            feas["constraints"] = pd
        run.json("feasibility.json", feas)
        out["late_lower_bound"] = rep.to_dict()
        if run.svg:
            svg.line_chart(run.path("late_floor.svg"), d["x"],
                           {"p_kde": d["p_kde"], "p_kde-3se": d["p_kde"] - v.n_se * d["p_kde_se"],
                            "floor": d["floor"]},
                           title=f"late-regime density, t={t}", xlabel="x")
    if "kh_constraints" in checks:
        plan, pd, rep = _plan(cfg, model, t, _x_target(args, cfg, model, t))
        run.add(rep)
        out["kh_constraints"] = pd
    run.json("late.json", out)
    return run.finish()


# --- parser -----------------------------------------------------------------

def _pipeline_parser(sub, name, fn, help_, t_help, with_x=False, with_dump=False):
    p = sub.add_parser(name, help=help_)
    p.add_argument("config", help="INI configuration file")
    p.add_argument("--t", type=float, help=t_help)
    p.add_argument("--paths", type=int, help="override simulation.paths")
    p.add_argument("--seed", type=int, help="override simulation.seed")
    p.add_argument("--workers", type=int, help="override simulation.workers (0 = all CPUs)")
    p.add_argument("--out", help=f"output directory (default: config, ${ENV_OUT}, ./{DEFAULT_OUT})")
    p.add_argument("--svg", action="store_true", help="also write SVG plots")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config entry; repeatable")
    if with_x:
        p.add_argument("--x", type=float, help="target point of the waypoint chain")
    else:
        p.set_defaults(x=None)
    if with_dump:
        p.add_argument("--dump-paths", type=int, default=10,
                       help="number of paths written to paths.csv / fbm_paths.csv")
    p.set_defaults(func=fn)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="sddelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-lemmas", help="verify the two H-space inequalities")
    p.add_argument("--h", type=float, default=0.75, help="Hurst index in (0.5, 1)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--intervals", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_lemmas)

    _pipeline_parser(sub, "simulate", cmd_simulate, "simulate fBm and X, write moments",
                     "horizon (default T)", with_dump=True)
    _pipeline_parser(sub, "gf", cmd_gf, "estimate g_F and check its bracket", "time in (0, r]")
    _pipeline_parser(sub, "density", cmd_density, "NV-formula density and KDE", "time in (0, r]")
    _pipeline_parser(sub, "verify-early", cmd_verify_early, "two-sided bound for t <= r",
                     "time in (0, r]")
    _pipeline_parser(sub, "verify-late", cmd_verify_late, "block estimates and lower bound for t > r",
                     "time in (r, T]", with_x=True)
    _pipeline_parser(sub, "kh-constants", cmd_kh_constants, "constants of the waypoint chain",
                     "time in (r, T]", with_x=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, config.ConfigError, ModelError, ExpressionError,
            khbound.PlanError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
