"""Command-line front end: analyze, enumerate, simulate, redteam.

Configuration comes from an optional JSON file plus flag overrides; outputs are
CSV traces and JSON reports in the chosen output directory.  Exit codes encode
the detection outcome: 0 normal, 10 attack detected, 11 top hypotheses
indistinguishable, 1 error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import sim
from .analysis import max_correctable, resilience_guarantee, strong_detectability
from .controller import gains_to_json
from .mm_estimator import EstimatorConfig, detection_report
from .model import ModeSet, enumerate_modes, enumerate_supports, build_mode, topology_from_json
from .sim import (
    ClosedLoopController,
    Scenario,
    design_controller_bank,
    scenario_from_json,
    simulate,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DETECTED = 10
EXIT_INDISTINGUISHABLE = 11

log = logging.getLogger("resilient_mm")


def _setup_logging() -> None:
    level = os.environ.get("RESILIENT_MM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _resolve_modes(cfg: dict) -> tuple[ModeSet, dict]:
    """Resolve a mode bank from `topology` (builtin:<name> or JSON path).

    Returns the bank and a context dict carrying builtin controller defaults.
    """
    source = cfg.get("topology")
    if source is None:
        raise ValueError("config needs a 'topology' (builtin:<name> or path)")
    ctx: dict = {}
    if source == "builtin:benchmark":
        topo = sim.benchmark_topology()
        return enumerate_modes(topo, p=int(cfg.get("p", 4))), ctx
    if source == "builtin:three_area_breakers":
        modes = sim.build_power_network(
            sim.three_area_network(), sim.three_area_breaker_modes()
        )
        return modes, ctx
    if source == "builtin:three_area_mitigation":
        modes = sim.build_power_network(
            sim.three_area_network(), sim.three_area_actuator_modes()
        )
        ctx["fb_cols"] = [0, 1, 2]  # the three mechanical-power inputs
        ctx["d2_bound"] = float(cfg.get("d2_bound", 10.0))
        ctx["d2_rate_bound"] = float(cfg.get("d2_rate_bound", 0.1))
        return modes, ctx
    if source == "builtin:mirror_pair":
        return sim.mirror_pair_modes(), ctx
    topo, supports = topology_from_json(source)
    if supports:
        return ModeSet([build_mode(topo, s) for s in supports]), ctx
    p = cfg.get("p")
    if p is None:
        raise ValueError("topology JSON has no supports; supply 'p' to enumerate")
    return (
        enumerate_modes(topo, int(p), cfg.get("n_a"), cfg.get("n_s")),
        ctx,
    )


def _resolve_scenario(cfg: dict, modes: ModeSet) -> Scenario:
    source = cfg.get("scenario")
    if source is None:
        raise ValueError("config needs a 'scenario' (builtin:<name> or path)")
    if source == "builtin:benchmark":
        _, scenario = sim.build_benchmark(
            horizon=int(cfg.get("horizon", 1000)), seed=int(cfg.get("seed", 42))
        )
        return scenario
    if source == "builtin:three_area_breakers":
        horizon = int(cfg.get("horizon", 1200))
        n = modes[0].n
        m = modes[0].m
        # fluctuating load demand keeps the tie-line flows informative
        k = np.arange(horizon)
        inputs = np.zeros((horizon, m))
        inputs[:, m - 3] = 2.0 * np.sin(2.0 * np.pi * k / 120.0)
        inputs[:, m - 1] = -1.5 * np.sin(2.0 * np.pi * k / 170.0)
        return Scenario(
            horizon=horizon,
            mode_schedule=sim.mode_schedule_from_pairs(horizon, [(0, 0), (horizon // 2, 2)]),
            inputs=inputs,
            seed=int(cfg.get("seed", 42)),
            x0=0.05 * np.ones(n),
            x0_hat=np.zeros(n),
            P0=0.1 * np.eye(n),
            nominal_mode=0,
        )
    if source == "builtin:three_area_mitigation":
        horizon = int(cfg.get("horizon", 1500))
        n = modes[0].n
        attack = np.zeros((horizon, 1))
        attack[horizon // 5 :] = float(cfg.get("attack_level", 1.0))
        return Scenario(
            horizon=horizon,
            mode_schedule=np.zeros(horizon, dtype=int),
            inputs=np.zeros((horizon, modes[0].m)),
            seed=int(cfg.get("seed", 42)),
            x0=np.zeros(n),
            x0_hat=np.zeros(n),
            P0=0.01 * np.eye(n),
            attack=attack,
            nominal_mode=0,
        )
    if source == "builtin:mirror_pair":
        return sim.mirror_pair_scenario(
            horizon=int(cfg.get("horizon", 12000)),
            seed=int(cfg.get("seed", 7)),
            true_mode=int(cfg.get("star", 1)),
        )
    scenario = scenario_from_json(source)
    if cfg.get("seed") is not None:
        scenario = replace(scenario, seed=int(cfg["seed"]))
    return scenario


def _estimator_config(cfg: dict) -> EstimatorConfig:
    return EstimatorConfig(
        epsilon=float(cfg.get("epsilon", 1e-6)),
        rho=float(cfg.get("rho", 1.05)),
        window=int(cfg.get("window", 200)),
    )


def _json_complex(values: list[complex]) -> list[list[float]]:
    return [[z.real, z.imag] for z in values]


def cmd_analyze(cfg: dict, out_dir: Path) -> int:
    modes, _ = _resolve_modes(cfg)
    verdicts = []
    for i, mode in enumerate(modes):
        v = strong_detectability(mode)
        verdicts.append(
            {
                "mode": i,
                "label": repr(mode.label),
                "strongly_detectable": v.strongly_detectable,
                "normal_rank": v.normal_rank,
                "invariant_zeros": _json_complex(v.invariant_zeros),
                "max_zero_modulus": v.max_zero_modulus,
                "reason": v.reason,
            }
        )
    bound = max_correctable(modes)
    resilience = resilience_guarantee(modes)
    report = {
        "n_modes": len(modes),
        "detectability": verdicts,
        "correctable_bound": {
            "p_star": bound.p_star,
            "entries": [
                {"label": repr(lbl), "p": p, "within_bound": ok}
                for lbl, p, ok in bound.entries
            ],
            "all_within_bound": bound.all_within_bound,
        },
        "resilience_guarantee": {
            "hypothesis_ok": resilience.hypothesis_ok,
            "note": resilience.hypothesis_note,
            "guaranteed": resilience.guaranteed,
            "pairs": [
                {
                    "q": p.q,
                    "q_prime": p.q_prime,
                    "condition": p.condition,
                    "required_rank": p.required_rank,
                    "rank": p.rank,
                    "satisfiable": p.satisfiable,
                    "holds": p.holds,
                }
                for p in resilience.pairs
            ],
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "analysis.json").write_text(json.dumps(report, indent=2))
    log.info("wrote %s", out_dir / "analysis.json")
    return EXIT_OK


def cmd_enumerate(cfg: dict, out_dir: Path) -> int:
    source = cfg.get("topology")
    if source is None or str(source).startswith("builtin:"):
        modes, _ = _resolve_modes(cfg)
        supports_doc = [repr(m.label) for m in modes]
        count = len(modes)
    else:
        topo, _ = topology_from_json(source)
        p = int(cfg["p"])
        supports = enumerate_supports(topo, p, cfg.get("n_a"), cfg.get("n_s"))
        supports_doc = [repr((s.q_m, s.support_key)) for s in supports]
        count = len(supports)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "modes.json").write_text(
        json.dumps({"count": count, "modes": supports_doc}, indent=2)
    )
    print(count)
    return EXIT_OK


def _detection_exit(report) -> int:
    if report.indistinguishable_set:
        return EXIT_INDISTINGUISHABLE
    if report.attack_detected:
        return EXIT_DETECTED
    return EXIT_OK


def _simulate_one(
    modes: ModeSet,
    scenario: Scenario,
    est_cfg: EstimatorConfig,
    controller: ClosedLoopController | None,
    out_dir: Path,
    tag: str,
) -> tuple[int, dict]:
    trace = simulate(modes, scenario, config=est_cfg, controller=controller)
    trace.to_csv(out_dir / f"trace{tag}.csv")
    summary = trace.summary()
    window = min(est_cfg.window, max(1, len(trace.bank.loglik_history)))
    report = detection_report(trace.bank, scenario.nominal_mode, window=window)
    summary["detection"] = {
        "attack_detected": report.attack_detected,
        "identified_mode": report.identified_mode,
        "indistinguishable_set": report.indistinguishable_set,
        "favored_mode": report.favored_mode,
        "window": report.window,
    }
    code = EXIT_ERROR if trace.truncated else _detection_exit(report)
    summary["exit_code"] = code
    summary["seed"] = scenario.seed
    return code, summary


def cmd_simulate(cfg: dict, out_dir: Path, mitigate: bool, runs: int) -> int:
    modes, ctx = _resolve_modes(cfg)
    scenario = _resolve_scenario(cfg, modes)
    if cfg.get("seed") is None and "seed" not in cfg:
        raise ValueError("simulate requires a seed")
    est_cfg = _estimator_config(cfg)
    controller = None
    if ctx.get("fb_cols") is not None:
        controller = design_controller_bank(
            modes,
            fb_cols=ctx["fb_cols"],
            d2_bound=ctx.get("d2_bound", np.inf),
            d2_rate_bound=ctx.get("d2_rate_bound", 0.0),
            rejection=mitigate,
        )
    elif mitigate:
        controller = design_controller_bank(modes, rejection=True)
    out_dir.mkdir(parents=True, exist_ok=True)
    if controller is not None:
        (out_dir / "gains.json").write_text(
            json.dumps([gains_to_json(g) for g in controller.gains if g], indent=2)
        )

    if runs <= 1:
        code, summary = _simulate_one(modes, scenario, est_cfg, controller, out_dir, "")
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
        return code

    jobs = [
        (modes, replace(scenario, seed=scenario.seed + i), est_cfg, controller, out_dir, f"_seed{scenario.seed + i}")
        for i in range(runs)
    ]
    with concurrent.futures.ProcessPoolExecutor(max_workers=min(runs, os.cpu_count() or 1)) as pool:
        results = list(pool.map(_simulate_one_star, jobs))
    summaries = [s for _, s in results]
    (out_dir / "summary.json").write_text(json.dumps(summaries, indent=2))
    return results[0][0]


def _simulate_one_star(args) -> tuple[int, dict]:
    return _simulate_one(*args)


def cmd_redteam(cfg: dict, out_dir: Path) -> int:
    modes, _ = _resolve_modes(cfg)
    if cfg.get("seed") is None:
        raise ValueError("redteam requires a seed")
    q = int(cfg.get("q", 0))
    star = int(cfg.get("star", 1))
    scenario = _resolve_scenario(cfg, modes)
    plan = sim.design_unidentifiable_attack(
        modes,
        q,
        star,
        scenario,
        n_runs=int(cfg.get("moment_runs", 100)),
        refine=int(cfg.get("refine", 1)),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "q": q,
        "star": star,
        "feasible": plan.feasible,
        "diagnostics": plan.diagnostics,
        "D_s": plan.D_s.tolist(),
    }
    if not plan.feasible:
        (out_dir / "redteam.json").write_text(json.dumps(doc, indent=2))
        print("infeasible:", plan.diagnostics)
        return EXIT_OK
    attack = sim.PlanAttack(plan)
    run_scenario = replace(scenario, attack=attack)
    est_cfg = _estimator_config(cfg)
    trace = simulate(modes, run_scenario, config=est_cfg, warn_detectability=False)
    window = int(cfg.get("redteam_window", 500))
    frac = sim.masquerade_band_fraction(
        trace.bank, q, star, window=window, rho=est_cfg.rho
    )
    report = detection_report(trace.bank, nominal_mode=q, window=window)
    doc.update(
        {
            "band_window": window,
            "band_fraction": frac,
            "unidentifiable": frac >= 0.8,
            "identified_mode": report.identified_mode,
        }
    )
    trace.to_csv(out_dir / "redteam_trace.csv")
    (out_dir / "redteam.json").write_text(json.dumps(doc, indent=2))
    return EXIT_INDISTINGUISHABLE if frac >= 0.8 else EXIT_DETECTED


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="resilient-mm",
        description="Resilient multiple-model estimation, attack analysis and mitigation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("analyze", "enumerate", "simulate", "redteam"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="JSON run configuration")
        sp.add_argument("--topology", type=str, default=None)
        sp.add_argument("--scenario", type=str, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.add_argument("--p", type=int, default=None)
        if name == "simulate":
            sp.add_argument("--runs", type=int, default=1)
            sp.add_argument("--mitigate", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
        for key in ("topology", "scenario", "seed", "p"):
            val = getattr(args, key, None)
            if val is not None:
                cfg[key] = val
        out_dir = Path(args.out or cfg.get("out", "out"))
        if args.command == "analyze":
            return cmd_analyze(cfg, out_dir)
        if args.command == "enumerate":
            return cmd_enumerate(cfg, out_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir, args.mitigate, args.runs)
        if args.command == "redteam":
            return cmd_redteam(cfg, out_dir)
        raise ValueError(f"unknown command {args.command}")
    except Exception as exc:  # surface a clean diagnostic, reserve 1 for errors
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
