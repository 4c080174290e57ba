"""Command-line interface: scenario configs in, reports and CSV out.

Exit codes: 0 for success (and analyzed-stable), 2 for analyzed-unstable,
1 for any error.  All randomized outputs embed the config hash and master
seed so results can be replayed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import cartpole, humanmodel, pipeline, sessionlog, simkernel, stability
from .config import AppConfig, atomic_write_text, load_config
from .errors import WhmcError
from .humanmodel import LagChain
from .stability import GAIN_NAMES, LyapunovGains

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2


def _apply_overrides(cfg: AppConfig, args) -> AppConfig:
    sim = cfg.sim
    analysis = cfg.analysis
    if getattr(args, "seed", None) is not None:
        sim = replace(sim, master_seed=args.seed)
    if getattr(args, "mc_budget", None) is not None:
        analysis = replace(analysis, ir_mc_budget=args.mc_budget)
    if getattr(args, "tail_eps", None) is not None:
        analysis = replace(analysis, tail_eps=args.tail_eps)
    return replace(cfg, sim=sim, analysis=analysis)


def _write_json(path, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True)
                      + "\n")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def _load_estimates(path):
    with open(path) as fh:
        report = json.load(fh)
    gains = None
    chain = None
    if report.get("gains"):
        gains = LyapunovGains(**report["gains"])
    if report.get("chain"):
        chain = LagChain(
            states=np.asarray(report["chain"]["states_steps"],
                              dtype=np.int64),
            matrix=np.asarray(report["chain"]["transition_matrix"],
                              dtype=float))
    return gains, chain


def cmd_check(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    gains = chain = None
    if args.estimates:
        gains, chain = _load_estimates(args.estimates)
    verdict = pipeline.verdict_for_regime(cfg, args.regime, gains=gains,
                                          chain=chain)
    report = {
        "regime": args.regime,
        "lhs": verdict.lhs,
        "stable": verdict.stable,
        "band": verdict.band,
        "breakdown": {k: (v if not isinstance(v, float) or
                          math.isfinite(v) else repr(v))
                      for k, v in verdict.breakdown.items()},
        "config_hash": cfg.config_hash,
        "master_seed": cfg.sim.master_seed,
    }
    print(f"regime={args.regime} lhs={verdict.lhs:.6g} "
          f"band={verdict.band}")
    for key, value in sorted(verdict.breakdown.items()):
        print(f"  {key}: {value}")
    if args.out:
        _write_json(os.path.join(args.out, "check_report.json"), report)
    return EXIT_OK if verdict.stable else EXIT_UNSTABLE


def cmd_region(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.gains is None:
        print("error: region sweeps need a gains section", file=sys.stderr)
        return EXIT_ERROR
    if args.pair:
        names = tuple(args.pair.split(","))
    else:
        names = tuple(cfg.region.pair)
    if len(names) != 2 or any(n not in GAIN_NAMES for n in names):
        print(f"error: --pair must name two of {GAIN_NAMES}",
              file=sys.stderr)
        return EXIT_ERROR
    if args.grid:
        lo, hi, n = args.grid.split(":")
        grid = np.linspace(float(lo), float(hi), int(n))
    else:
        grid = np.linspace(cfg.region.grid_min, cfg.region.grid_max,
                           cfg.region.grid_points)
    if len(grid) == 0:
        print("error: empty sweep grid", file=sys.stderr)
        return EXIT_ERROR
    p_m = pipeline.open_machine_prob(cfg)
    dist = pipeline.interval_dist(cfg)
    points = stability.boundary_curve(names, cfg.gains, p_m, dist, grid)
    out = args.out or "."
    boundary_rows = [(p.x, p.y, p.status, p.lhs) for p in points]
    _write_csv(os.path.join(out, f"boundary_{names[0]}_{names[1]}.csv"),
               ["param1", "param2", "status", "lhs"], boundary_rows)

    raster_rows = []
    ys = np.linspace(grid.min(), grid.max(), len(grid))
    for x in grid:
        for y in ys:
            updated = replace(cfg.gains, **{names[0]: float(x)})
            try:
                updated = replace(updated, **{names[1]: float(y)})
                lhs = stability.collab_lhs(updated, p_m, dist).lhs
            except WhmcError:
                lhs = math.nan
            raster_rows.append((float(x), float(y), lhs,
                                bool(lhs < 1.0 - stability.STRICT_BAND)))
    _write_csv(os.path.join(out, f"raster_{names[0]}_{names[1]}.csv"),
               ["param1", "param2", "lhs", "stable"], raster_rows)

    summary = {
        "pair": list(names),
        "grid": [float(grid.min()), float(grid.max()), int(len(grid))],
        "p_open_machine": p_m,
        "n_ok": sum(1 for p in points if p.status == "ok"),
        "n_unbounded": sum(1 for p in points if p.status == "unbounded"),
        "n_empty": sum(1 for p in points if p.status == "empty"),
        "config_hash": cfg.config_hash,
        "master_seed": cfg.sim.master_seed,
    }
    if set(names) == {"alpha_hm", "alpha_h"}:
        line = stability.boundary_linear_hm_h(cfg.gains, p_m, dist)
        summary["closed_form_line"] = {"slope": line.slope,
                                       "intercept": line.intercept}
    if set(names) == {"alpha_m", "alpha"}:
        line = stability.boundary_linear_m_alpha(cfg.gains, p_m, dist)
        summary["closed_form_line"] = {"slope": line.slope,
                                       "intercept": line.intercept}
    _write_json(os.path.join(out, "region_summary.json"), summary)
    print(f"wrote boundary and raster CSVs for {names} to {out}")
    return EXIT_OK


_REGIME_FLAGS = {
    "collab": dict(machine_enabled=True, human_enabled=True),
    "machine": dict(machine_enabled=True, human_enabled=False),
    "human": dict(machine_enabled=False, human_enabled=True),
}


def _session_log_from_trace(trace, cfg: AppConfig, path):
    """Emit a session-schema log (steps, loops, synthetic lags) for a trace."""
    ts = cartpole.CartPoleParams(**cfg.plant.params).ts \
        if cfg.plant.kind == "cartpole" else 0.05
    lines = [json.dumps(sessionlog.meta_record(
        cfg.config_hash, ts, 1.0 / ts, {"source": "simulate"}))]
    for rec in trace.records:
        theta = float(rec.state[cartpole.IDX_THETA]) if rec.state.size else 0.0
        lines.append(json.dumps(sessionlog.step_record(
            rec.t, theta, rec.case)))
    # one lag record per completed human loop, from the drawn chain lags
    loop = None
    lag_slots = 0
    tau_sh = 0
    for rec in trace.records:
        if rec.loop_index != loop:
            loop = rec.loop_index
            lag_slots = 0
            tau_sh = 0
        if rec.loop_phase == "sh":
            tau_sh += 1
        if rec.loop_phase == "lag":
            lag_slots += 1
        if rec.ha_attempt:
            # lag phase finished; record the realized lag for this loop
            lines.append(json.dumps(sessionlog.lag_record(
                loop, rec.t - lag_slots, rec.t, ts)))
            lines.append(json.dumps(sessionlog.loop_record(
                loop, tau_sh, bool(rec.ha_ok))))
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    summary = {"config_hash": cfg.config_hash,
               "master_seed": cfg.sim.master_seed, "regimes": {}}
    traces = {}
    for regime, flags in _REGIME_FLAGS.items():
        scenario = pipeline.build_scenario(cfg, **flags)
        trace = simkernel.run(scenario)
        traces[regime] = trace
        trace_path = os.path.join(out, f"trace_{regime}.ndjson")
        trace.write_ndjson(trace_path)
        with open(trace_path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        costs = simkernel.cumulative_cost(trace, cartpole.cost)
        summary["regimes"][regime] = {
            "steps": len(trace.records),
            "diverged": trace.diverged,
            "final_cumulative_cost": float(costs[-1]),
            "trace_sha256": digest,
        }
        if flags["human_enabled"]:
            _session_log_from_trace(
                trace, cfg, os.path.join(out, f"session_{regime}.ndjson"))

    curves = {r: simkernel.cumulative_cost(t, cartpole.cost)
              for r, t in traces.items()}
    n = max(len(c) for c in curves.values())
    rows = []
    for t in range(n):
        row = [t]
        for regime in _REGIME_FLAGS:
            c = curves[regime]
            row.append(repr(float(c[t])) if t < len(c) else "")
        rows.append(row)
    _write_csv(os.path.join(out, "cost_curves.csv"),
               ["t"] + [f"cum_cost_{r}" for r in _REGIME_FLAGS], rows)

    if cfg.analysis.oracle_cycles > 0:
        stats = simkernel.estimate_cycle_stats(
            pipeline.build_scenario(cfg, plant=pipeline.StaticPlant()),
            cfg.analysis.oracle_cycles)
        dist = pipeline.interval_dist(cfg)
        summary["oracle"] = {
            "n_cycles": stats.n_cycles,
            "tv_distance": simkernel.tv_distance(stats.pmf, dist.z),
            "p_open_human_hat": stats.p_open_human,
            "p_open_human_se": stats.p_open_human_se,
            "p_open_machine_hat": stats.p_open_machine,
            "p_open_machine_se": stats.p_open_machine_se,
            "mean_length_hat": stats.mean_length,
            "mean_length_se": stats.mean_length_se,
            "mean_length_analytic": dist.mean(),
        }
    _write_json(os.path.join(out, "simulate_summary.json"), summary)
    print(f"simulated regimes {list(_REGIME_FLAGS)} -> {out}")
    for regime, info in summary["regimes"].items():
        print(f"  {regime}: steps={info['steps']} "
              f"diverged={info['diverged']} "
              f"final_cost={info['final_cumulative_cost']:.4g}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    lag_seconds = []
    datasets = {k: [] for k in cartpole.CASE_KEYS}
    threshold = cartpole.CartPoleParams(**cfg.plant.params).v_threshold \
        if cfg.plant.kind == "cartpole" else 0.05
    warnings_out = []
    for path in args.logs:
        if path.endswith(".ndjson") or path.endswith(".jsonl"):
            session = sessionlog.parse_session_log(path)
            lag_seconds.extend(session.lag_seconds())
            steps = sorted(session.steps, key=lambda r: r["t"])
            for cur, nxt in zip(steps[:-1], steps[1:]):
                v0 = cartpole.lyapunov_v(cur["theta"], threshold)
                v1 = cartpole.lyapunov_v(nxt["theta"], threshold)
                datasets[int(cur["case"])].append((v0, v1))
        else:
            lag_seconds.extend(sessionlog.read_lag_text(path))

    report = {"schema_version": sessionlog.SCHEMA_VERSION,
              "config_hash": cfg.config_hash, "gains": None, "chain": None,
              "warnings": warnings_out}
    if lag_seconds:
        lag_states = humanmodel.quantize_lags(
            lag_seconds, cfg.estimation.lag_state_set_s,
            cartpole.CartPoleParams(**cfg.plant.params).ts
            if cfg.plant.kind == "cartpole" else 0.05)
        declared = humanmodel.quantize_lags(
            cfg.estimation.lag_state_set_s, cfg.estimation.lag_state_set_s,
            cartpole.CartPoleParams(**cfg.plant.params).ts
            if cfg.plant.kind == "cartpole" else 0.05)
        chain = humanmodel.estimate_chain(lag_states,
                                          states=sorted(set(declared)))
        v = humanmodel.stationary(chain)
        report["chain"] = {
            "states_steps": chain.states.tolist(),
            "transition_matrix": chain.matrix.tolist(),
        }
        report["stationary"] = v.tolist()
        report["n_lags"] = len(lag_states)
        print(f"estimated lag chain over states {chain.states.tolist()}:")
        for row in chain.matrix:
            print("  " + "  ".join(f"{x:.4f}" for x in row))
        print("stationary distribution: "
              + ", ".join(f"{x:.4f}" for x in v))
    else:
        warnings_out.append("no lag measurements found; chain not estimated")

    try:
        gains = cartpole.estimate_gains(datasets, threshold)
        report["gains"] = {"alpha_hm": gains.alpha_hm,
                           "alpha_m": gains.alpha_m,
                           "alpha_h": gains.alpha_h,
                           "alpha": gains.alpha}
        print(f"estimated gains: alpha_hm={gains.alpha_hm:.4f} "
              f"alpha_m={gains.alpha_m:.4f} alpha_h={gains.alpha_h:.4f} "
              f"alpha={gains.alpha:.4f}")
    except WhmcError as exc:
        warnings_out.append(f"gains not estimated: {exc}")

    if report["gains"] is None and report["chain"] is None:
        print("error: nothing could be estimated from the given logs",
              file=sys.stderr)
        return EXIT_ERROR
    out = args.out or "."
    _write_json(os.path.join(out, "estimates.json"), report)
    for w in warnings_out:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="whmc",
        description="Stability analysis and simulation for dual-loop "
                    "wireless human-machine control")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario YAML")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--mc-budget", type=int, default=None,
                       help="override the IR Monte Carlo budget")
        p.add_argument("--tail-eps", type=float, default=None,
                       help="override the pmf truncation budget")

    p_check = sub.add_parser("check", help="evaluate a stability verdict")
    common(p_check)
    p_check.add_argument("--regime", default="collab",
                         choices=list(pipeline.REGIMES))
    p_check.add_argument("--estimates", default=None,
                         help="estimates.json overriding gains/chain")
    p_check.set_defaults(fn=cmd_check)

    p_region = sub.add_parser("region", help="sweep a stability-region "
                                             "boundary")
    common(p_region)
    p_region.add_argument("--pair", default=None,
                          help="two gain names, comma separated")
    p_region.add_argument("--grid", default=None, help="MIN:MAX:N")
    p_region.set_defaults(fn=cmd_region)

    p_sim = sub.add_parser("simulate", help="run the three control regimes")
    common(p_sim)
    p_sim.set_defaults(fn=cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate gains and lag chain "
                                            "from logs")
    common(p_est)
    p_est.add_argument("logs", nargs="+", help="session NDJSON or plain "
                                               "lag files")
    p_est.set_defaults(fn=cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except WhmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
