"""Command line entry point for the benchmark harness."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import experiments
from .report import build_report, emit_report, failed_checks, render_text
from .scenario import cluster_separation, generate_scenario, load_scenario_config

EXPERIMENTS = {
    "compliance": experiments.run_compliance,
    "ablation": experiments.run_ablation,
    "curation": experiments.run_curation,
    "scalability": experiments.run_scalability,
    "adversarial": experiments.run_adversarial,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pasa-bench", description="Governed pub/sub benchmark harness.")
    p.add_argument("command", choices=["gen", *EXPERIMENTS, "all"])
    p.add_argument("--seed", type=int, help="scenario seed (default 42)")
    p.add_argument("--config", help="JSON file with scenario overrides")
    p.add_argument("--out", default="bench-out", help="output directory (default: bench-out)")
    p.add_argument("--format", choices=["json", "text", "both"], default="both")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    started = time.perf_counter()
    config = load_scenario_config(args.config, seed=args.seed)
    scenario = generate_scenario(config)
    out = Path(args.out)

    if args.command == "gen":
        out.mkdir(parents=True, exist_ok=True)
        (out / "scenario.txt").write_text(scenario.to_text())
        sep = cluster_separation(scenario)
        (out / "scenario.json").write_text(json.dumps({"config": config.to_dict(), "separation": sep}, indent=1, sort_keys=True))
        print(f"wrote {len(scenario.chunks)} chunks, {len(scenario.agents)} agents, "
              f"{len(scenario.subscriptions)} subscriptions to {out}")
        print(f"intra-domain above threshold {sep['intra_above_threshold']:.3f}, "
              f"inter-domain below {sep['inter_below_threshold']:.3f}")
        return 0

    names = list(EXPERIMENTS) if args.command == "all" else [args.command]
    results = {name: EXPERIMENTS[name](scenario) for name in names}
    report = build_report(scenario, results, started=started)
    name = "report" if args.command == "all" else args.command
    for fmt in (["json", "text"] if args.format == "both" else [args.format]):
        emit_report(report, out, fmt, name)
    sys.stdout.write(render_text(report))
    return 1 if failed_checks(report) else 0


if __name__ == "__main__":
    sys.exit(main())
