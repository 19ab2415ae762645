"""Command line entry point: ``skewheat <subcommand> --config FILE --seed U64``.

Each subcommand writes ``<subcommand>.json`` (report and check verdicts),
optional CSV tables and binary path frames into ``--out``, plus a sidecar
``<subcommand>.meta.json`` holding the only non-reproducible data
(timestamp, worker count, command line). Exit status: 0 if every check
passes, 1 if a check fails, 2 on configuration or runtime errors.

Seed derivation: task ``i`` of a subcommand draws from
``derive(seed, subcommand, i)``; task boundaries are fixed by the config, so
reports do not depend on ``--workers``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from . import __version__
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, parse_config
from .drift import JumpDrift, mollify
from .harness import convergence_study, holder_scaling, stationary_heat_trajectories
from .localtime import Cylinder, ibp_residual_continuum, ibp_residual_discrete
from .measures import GibbsSpec, estimate_Z, sample_gibbs
from .pathcore import LINEAR, Grid, Path, TestFunction, basis_vector, write_frames
from .rng import derive
from .skew import simulate_interacting, skew_walk_path
from .spde import SpdeScheme, martingale_check, simulate_regularized, stationarity_check
from .spectral import divergence_diagnostic, hs_trace, partition_counts


class Outcome:
    def __init__(self):
        self.report: dict = {}
        self.checks: list[dict] = []
        self.files: dict[str, bytes | str] = {}

    def check(self, name: str, ok: bool, **detail):
        self.checks.append({"name": name, "ok": bool(ok), **detail})

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks)


def _pmap(fn: Callable, tasks: list, workers: int) -> list:
    """Ordered map; a process pool when more than one worker is requested."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _f(x):
    """JSON-safe float."""
    x = float(x)
    return x if math.isfinite(x) else str(x)


# --------------------------------------------------------------------------
# sample-gibbs


def _z_task(args):
    drift_cfg, level, mesh, rule, m, seed, i = args
    spec = GibbsSpec(JumpDrift.from_config(drift_cfg), level=level, mesh=mesh, rule=rule)
    z = estimate_Z(spec, m, derive(seed, "sample-gibbs", i))
    return z.mean, z.stderr, z.n_samples


def run_sample_gibbs(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    mesh = p["mesh"]
    level = None if p["target"] == "nu" else p["level"]
    sizes = [p["task_size"]] * (p["M"] // p["task_size"])
    if p["M"] % p["task_size"]:
        sizes.append(p["M"] % p["task_size"])
    if sizes and sizes[-1] < 2:
        sizes[-2] += sizes.pop()
    tasks = [(cfg.drift.to_config(), level, mesh, p["rule"], m, cfg.seed, i) for i, m in enumerate(sizes)]
    parts = _pmap(_z_task, tasks, cfg.workers)
    n = sum(k for _, _, k in parts)
    mean = sum(mu * k for mu, _, k in parts) / n
    se = math.sqrt(sum((s * k) ** 2 for _, s, k in parts)) / n
    out.report["Z"] = {"mean": _f(mean), "stderr": _f(se), "n_samples": n}
    if p["frames"]:
        spec = GibbsSpec(cfg.drift, level=level, mesh=mesh, rule=p["rule"])
        x = sample_gibbs(spec, derive(cfg.seed, "sample-gibbs", "frames"), p["frames"])
        buf = io.BytesIO()
        write_frames(buf, (x[i] for i in range(p["frames"])))
        out.files["samples.skhp"] = buf.getvalue()
    if p["z_target"] is not None:
        out.check("Z", abs(mean - p["z_target"]) <= p["z_tol"], target=p["z_target"], tol=p["z_tol"])
    return out


# --------------------------------------------------------------------------
# spectral


def run_spectral(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    C = partition_counts(p["N"])     # raises ConsistencyError if the two counts differ
    out.files["counts.csv"] = "n,C_n\n" + "".join(f"{n},{c}\n" for n, c in enumerate(C))
    out.check("C_0", C[0] == 1)
    out.check("dual_count", True, N=p["N"])
    hs = []
    for t in p["t"]:
        r = hs_trace(float(t), K=p["K"], N=p["trunc"])
        hs.append({k: _f(v) for k, v in r.to_json().items()})
        out.check(f"hs_trace[t={t}]", r.rel_gap <= p["rel_tol"], rel_gap=_f(r.rel_gap))
    out.report["hs_trace"] = hs
    div = divergence_diagnostic(p["divergence_N"], tuple(int(c) for c in p["checkpoints"]))
    out.report["divergence"] = {
        "checkpoints": list(div.checkpoints),
        "partial_sums": [_f(div.at(c)) for c in div.checkpoints],
        "gap_ratio": _f(div.gap_ratio),
        "log_slope": _f(div.log_slope),
    }
    if len(div.checkpoints) >= 3:
        out.check("divergence", div.gap_ratio >= p["gap_ratio_min"], gap_ratio=_f(div.gap_ratio))
    return out


# --------------------------------------------------------------------------
# ibp


def _ibp_task(args):
    drift_cfg, route, level, M, mode, phi, seed, i = args
    d = JumpDrift.from_config(drift_cfg)
    rng = derive(seed, "ibp", i)
    if route == "continuum":
        g = Grid(level)
        h = TestFunction.sine(mode, g)
        r = ibp_residual_continuum(d, h, Cylinder(phi, basis_vector(mode, g)), M, rng, level=level)
    else:
        N = 1 << level
        c = (np.arange(N) + 0.5) / N
        h = np.sqrt(2.0) * np.sin(mode * np.pi * c)
        r = ibp_residual_discrete(d, level, h, Cylinder(phi, h), M, rng)
    return r.to_json()


def run_ibp(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    cases = [(k, phi) for k in p["modes"] for phi in p["phi"]]
    tasks = [(cfg.drift.to_config(), p["route"], p["level"], p["M"], int(k), phi, cfg.seed, i)
             for i, (k, phi) in enumerate(cases)]
    res = _pmap(_ibp_task, tasks, cfg.workers)
    rows = []
    for (k, phi), r in zip(cases, res):
        gap = abs(r["lhs"] - r["rhs"])
        ok = gap <= p["k_sigma"] * r["stderr"] or gap < 1e-12
        rows.append({"mode": k, "phi": phi, **{a: _f(b) for a, b in r.items()}})
        out.check(f"ibp[e{k},{phi}]", ok, gap=_f(gap), stderr=_f(r["stderr"]))
    out.report["cases"] = rows
    return out


# --------------------------------------------------------------------------
# skew-sim


def _walk_task(args):
    beta, T, dt, paths, seed, i = args
    x = skew_walk_path(beta, T, dt, rng=derive(seed, "skew-sim", i), size=paths)
    return float(np.mean(x > 0))


def run_skew_sim(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    if p["mode"] == "walk":
        tasks = [(float(b), p["T"], p["dt"], p["paths"], cfg.seed, i) for i, b in enumerate(p["beta"])]
        res = _pmap(_walk_task, tasks, cfg.workers)
        out.report["walk"] = [{"beta": _f(b), "p_positive": _f(q)} for b, q in zip(p["beta"], res)]
        for b, q in zip(p["beta"], res):
            out.check(f"walk[beta={b}]", abs(q - (1 + b) / 2) <= p["tol"], p_positive=_f(q))
        return out
    from .harness import ks_two_sample

    n = p["level"]
    spec = GibbsSpec(cfg.drift, level=n)
    x0 = sample_gibbs(spec, derive(cfg.seed, "skew-sim", "start"), p["M"])
    run = simulate_interacting(n, cfg.drift, p["dt"], p["T"], x0.values, derive(cfg.seed, "skew-sim", "run"),
                               stride=p["stride"] or None)
    fresh = sample_gibbs(spec, derive(cfg.seed, "skew-sim", "fresh"), p["M"]).values
    pv = [ks_two_sample(run.state.x[:, i], fresh[:, i])[1] for i in range(1 << n)]
    out.report["system"] = {"level": n, "dt": p["dt"], "T": p["T"], "crossings": run.crossings,
                            "ks_pvalues": [_f(v) for v in pv],
                            "mean_local_time": [_f(v) for v in run.state.local_times.mean(axis=(0, 1))]}
    out.check("invariance", all(v > p["p_min"] for v in pv), min_p=_f(min(pv)))
    if p["stride"]:
        buf = io.BytesIO()
        g = Grid(n)
        write_frames(buf, (Path(g, snap[0], "constant") for snap in run.snapshots))
        out.files["skew-trajectory.skhp"] = buf.getvalue()
    return out


# --------------------------------------------------------------------------
# spde-sim


def _scheme(cfg: ExperimentConfig, mesh, dt, index) -> SpdeScheme:
    d = cfg.drift
    if d.is_zero:
        return SpdeScheme(mesh, dt)
    return SpdeScheme(mesh, dt, mollify(d, index) if d.has_jumps else d)


def run_spde_sim(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    s = _scheme(cfg, p["mesh"], p["dt"], p["mollifier"])
    g = s.grid
    if p["u0"] == "gibbs":
        u0 = sample_gibbs(s.gibbs(), derive(cfg.seed, "spde-sim", "start"), p["M"])
    else:
        u0 = Path.zeros(g, LINEAR, (p["M"],))
    run = simulate_regularized(s, u0, p["T"], derive(cfg.seed, "spde-sim", "run"), stride=p["stride"] or None)
    mid = run.final.values[:, g.n_cells // 2]
    out.report["final"] = {"T": _f(run.times[-1]), "midpoint_mean": _f(mid.mean()), "midpoint_var": _f(mid.var())}
    if p["stride"]:
        buf = io.BytesIO()
        write_frames(buf, (run.at(k)[0] for k in range(len(run.times))))
        out.files["spde-trajectory.skhp"] = buf.getvalue()
        if p["slab_csv"]:
            lines = ["t," + ",".join(f"{r:.6g}" for r in g.nodes)]
            lines += [f"{t:.8g}," + ",".join(f"{v:.10g}" for v in run.slices[k, 0]) for k, t in enumerate(run.times)]
            out.files["slab.csv"] = "\n".join(lines) + "\n"
    if p["residual_mode"]:
        h = TestFunction.sine(p["residual_mode"], g)
        w = martingale_check(s, h, cfg.drift, p["eps"], p["T"], p["M"], derive(cfg.seed, "spde-sim", "residual"),
                             stride=max(1, p["stride"] or 10))
        target = float(np.sum(h.values**2) * g.h) * (w.times[-1] - p["eps"])
        out.report["residual"] = {"mean": _f(w.mean[-1]), "stderr": _f(w.stderr[-1]), "var": _f(w.var[-1]),
                                  "iso_target": _f(target), "skipped_slices": w.skipped}
        out.check("residual_mean", abs(w.mean[-1]) <= 3 * w.stderr[-1])
    return out


# --------------------------------------------------------------------------
# stationarity


def run_stationarity(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    s = _scheme(cfg, p["mesh"], p["dt"], p["mollifier"])
    res = stationarity_check(s, None, p["T"], p["M"], derive(cfg.seed, "stationarity"), shift_check=p["shift"])
    out.report["at_T"] = [r.to_json() for r in res["at_T"]]
    out.report["shift"] = [r.to_json() for r in res["shift"]]
    for r in res["at_T"] + res["shift"]:
        tag = "shift" if r in res["shift"] else "at_T"
        out.check(f"{tag}[{r.name}]", r.pvalue > p["p_min"], pvalue=_f(r.pvalue))
    return out


# --------------------------------------------------------------------------
# convergence


def run_convergence(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    rep = convergence_study(cfg.drift, [int(v) for v in p["levels"]], tuple(p["functionals"]), M=p["M"],
                            rng=derive(cfg.seed, "convergence"), reference_mesh=p["reference_mesh"],
                            reference_M=p["reference_M"], spde=p["spde"], bootstrap=p["bootstrap"])
    out.report.update(rep.to_json())
    out.files["convergence.csv"] = rep.to_csv()
    if not cfg.drift.is_zero:
        for nm in p["functionals"]:
            out.check(f"decreasing[{nm}]", rep.decreasing(nm))
    if p["spde"]:
        out.check("routes_agree", rep.routes_agree())
    return out


# --------------------------------------------------------------------------
# holder


def run_holder(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    out = Outcome()
    drift = None if cfg.drift.is_zero else (mollify(cfg.drift, 8) if cfg.drift.has_jumps else cfg.drift)
    times, slices, g = stationary_heat_trajectories(p["mesh"], p["dt"], p["T"], p["M"],
                                                    derive(cfg.seed, "holder", "runs"),
                                                    stride=p["stride"], drift=drift)
    fit = holder_scaling(times, slices, g, p["theta"], p["p"], p["lags"], norm=p["norm"],
                         rng=derive(cfg.seed, "holder", "bootstrap"))
    out.report["fit"] = {k: (_f(v) if isinstance(v, float) else v) for k, v in fit.to_json().items()}
    if p["norm"] == "holder":
        out.check("xi_above_one", fit.ci[0] > 1.0, ci=list(fit.ci))
    else:
        out.check("hm1_slope", fit.ci[1] >= p["p"] / 2, ci=list(fit.ci))
    return out


RUNNERS = {
    "sample-gibbs": run_sample_gibbs,
    "spectral": run_spectral,
    "ibp": run_ibp,
    "skew-sim": run_skew_sim,
    "spde-sim": run_spde_sim,
    "stationarity": run_stationarity,
    "convergence": run_convergence,
    "holder": run_holder,
}


def run(cfg: ExperimentConfig, argv=None) -> int:
    """Execute one configured experiment and write its files; returns the exit code."""
    outcome = RUNNERS[cfg.subcommand](cfg)
    os.makedirs(cfg.out, exist_ok=True)
    report = {"version": __version__, "config": cfg.to_json(), "report": outcome.report,
              "checks": outcome.checks, "ok": outcome.ok}
    with open(os.path.join(cfg.out, f"{cfg.subcommand}.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, content in sorted(outcome.files.items()):
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(os.path.join(cfg.out, name), mode) as fh:
            fh.write(content)
    meta = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "workers": cfg.workers,
            "argv": list(argv) if argv is not None else None}
    with open(os.path.join(cfg.out, f"{cfg.subcommand}.meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return 0 if outcome.ok else 1


def _u64(text: str) -> int:
    if not text.isdigit():
        raise argparse.ArgumentTypeError(f"seed must be a decimal u64, got {text!r}")
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skewheat", description="Simulation and verification runs.")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML config file (defaults are used when omitted)")
        sp.add_argument("--seed", type=_u64, help="master seed (decimal u64); overrides the config")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--out", default=".")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        cfg = parse_config(text, args.subcommand, seed=args.seed, out=args.out, workers=args.workers)
        return run(cfg, argv)
    except (ConfigError, ValueError, RuntimeError, OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError) and exc.line is not None:
            err["line"] = exc.line
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
