"""Report assembly: a JSON document embedding the oracle sets, or aligned text tables."""

from __future__ import annotations

import copy
import json
import platform
import time
from pathlib import Path
from typing import Any

from .scenario import Scenario

__all__ = ["build_report", "strip_timing", "render_text", "emit_report", "failed_checks"]

TIMING_KEYS = ("timing", "wall_clock")


def build_report(scenario: Scenario, results: dict[str, dict[str, Any]], *, started: float | None = None) -> dict[str, Any]:
    return {
        "seed": scenario.config.seed,
        "config": scenario.config.to_dict(),
        "scenario": {
            "chunks": len(scenario.chunks),
            "agents": len(scenario.agents),
            "subscriptions": len(scenario.subscriptions),
            "held_back": len(scenario.held_back),
        },
        "experiments": results,
        "checks": {f"{name}.{k}": v for name, res in results.items() for k, v in res.get("checks", {}).items()},
        "wall_clock": {
            "generated_at": time.time(),
            "elapsed_s": time.perf_counter() - started if started is not None else None,
            "python": platform.python_version(),
            "machine": platform.machine(),
        },
    }


def strip_timing(report: dict[str, Any]) -> dict[str, Any]:
    """Copy of ``report`` without wall-clock fields; what remains is seed-deterministic."""

    def walk(node):
        if isinstance(node, dict):
            return {k: walk(v) for k, v in node.items() if k not in TIMING_KEYS}
        if isinstance(node, list):
            return [walk(v) for v in node]
        return node

    return walk(copy.deepcopy(report))


def failed_checks(report: dict[str, Any]) -> list[str]:
    return sorted(k for k, ok in report["checks"].items() if not ok)


def _table(headers: list[str], rows: list[list[Any]]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[fmt(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    sep = "  ".join("-" * w for w in widths)
    body = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in cells]
    return "\n".join([line, sep, *body])


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def render_text(report: dict[str, Any]) -> str:
    out = [f"seed {report['seed']}  " + "  ".join(f"{k}={v}" for k, v in report["scenario"].items()), ""]
    ex = report["experiments"]
    if "compliance" in ex:
        rows = ex["compliance"]["rows"]
        out += ["Policy compliance and recall", _table(
            ["mode", "notifications", "violations", "compliance", "recall"],
            [[m, r["notifications"], r["violations"], _pct(r["compliance_rate"]), _pct(r["recall"])] for m, r in rows.items()],
        ), ""]
    if "ablation" in ex:
        a = ex["ablation"]
        out += [f"Dimension ablation ({len(a['sample'])} sampled chunks, {a['forbidden_total']} unauthorized matches)"]
        out += [_table(
            ["enabled", "notifications", "violations", "blocked", "block rate"],
            [["+".join(r["dimensions"]) or "(none)", r["notifications"], r["violations"], r["blocked"], _pct(r["block_rate"])]
             for r in a["chain"] + a["singletons"]],
        )]
        leaky = sum(1 for r in a["fixture_subsets"] if r["violations"] >= 1)
        out += [f"fixture: {leaky} of {len(a['fixture_subsets'])} dimension subsets leak", ""]
    if "curation" in ex:
        c = ex["curation"]
        out += [f"Curation guarantee ({c['chunks_active']} active, {c['chunks_proposed']} proposed chunks)", _table(
            ["variant", "total", "from validated", "from proposed"],
            [[k, r["total"], r["from_validated"], r["from_proposed"]] for k, r in c["rows"].items()],
        ), ""]
    if "scalability" in ex:
        s = ex["scalability"]
        lat = {r["subscriptions"]: r for r in s.get("timing", {}).get("latency", [])}
        out += ["Scalability (governed matching per event)", _table(
            ["subscriptions", "p50 ms", "p95 ms", "matches/event"],
            [[r["subscriptions"], lat.get(r["subscriptions"], {}).get("p50_ms", float("nan")),
              lat.get(r["subscriptions"], {}).get("p95_ms", float("nan")), r["matches_per_event"]] for r in s["rows"]],
        )]
        ratio = s.get("timing", {}).get("p50_ratio_500_vs_10")
        if ratio is not None:
            out.append(f"p50 ratio 500/10: {ratio:.2f}x")
        out.append("")
    if "adversarial" in ex:
        esc = ex["adversarial"]["rows"]["escalation"]
        cl = ex["adversarial"]["rows"]["cross_level"]
        out += ["Adversarial checks",
                f"escalation: {esc['rejected']}/{esc['attempts']} rejected ({_pct(esc['rejection_rate'])})",
                f"cross-level: {cl['chunks_at_risk']} of {cl['sampled_chunks']} sampled chunks at risk, "
                f"{cl['ungoverned_leaks']} ungoverned leaks, {cl['governed_leaks']} governed "
                f"(prevention {_pct(cl['prevention_rate'])}{', vacuous' if cl['vacuous'] else ''})", ""]
    failed = failed_checks(report)
    out.append("all checks passed" if not failed else "FAILED: " + ", ".join(failed))
    return "\n".join(out) + "\n"


def emit_report(report: dict[str, Any], out_dir: str | Path, fmt: str = "json", name: str = "report") -> Path:
    """Write ``report`` as ``<name>.json`` (machine-readable) or ``<name>.txt`` (tables)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{name}.json"
        path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    elif fmt == "text":
        path = out / f"{name}.txt"
        path.write_text(render_text(report))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path
