from .experiments import (
    adversarial_fixture,
    run_ablation,
    run_adversarial,
    run_compliance,
    run_curation,
    run_engine,
    run_scalability,
)
from .report import build_report, emit_report, render_text, strip_timing
from .scenario import DEFAULT_DOMAINS, DomainPolicy, Scenario, ScenarioConfig, cluster_separation, generate_scenario

__all__ = [
    "DEFAULT_DOMAINS",
    "DomainPolicy",
    "Scenario",
    "ScenarioConfig",
    "generate_scenario",
    "cluster_separation",
    "run_engine",
    "run_compliance",
    "run_ablation",
    "run_curation",
    "run_scalability",
    "run_adversarial",
    "adversarial_fixture",
    "build_report",
    "emit_report",
    "render_text",
    "strip_timing",
]
