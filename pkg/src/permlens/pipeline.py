"""The full pre-processing and analysis pipeline for one framework."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from .callgraph import CallGraph, build_cha
from .ir import FrameworkModel
from .propagate import PermissionMap, extract_and_propagate
from .pta import PointsToState, build_pta
from .rewrite import (
    RewrittenFramework, empty_methods, generate_entry_drivers, initialize_managers, initialize_services,
    lift, mark_identity_regions, redirect_services,
)

ANALYSES = ("cha", "pta")


@dataclass(frozen=True)
class RewriteOptions:
    redirect: bool = True
    identity: bool = True
    service_init: bool = True
    manager_init: bool = True
    empty: Tuple[str, ...] = ()


def prepare(fw: FrameworkModel, analysis: str = "cha", options: RewriteOptions = RewriteOptions()
            ) -> RewrittenFramework:
    """Apply the rewrites in order: redirection, identity regions, emptying,
    then (points-to only) service and manager initialization, then drivers."""
    if analysis not in ANALYSES:
        raise ValueError(f"unknown analysis {analysis!r}")
    rf = lift(fw)
    if options.redirect:
        rf = redirect_services(rf)
    if options.identity:
        rf = mark_identity_regions(rf)
    if options.empty:
        rf = empty_methods(rf, options.empty)
    if analysis == "pta":
        if options.service_init:
            rf = initialize_services(rf)
        if options.manager_init:
            rf = initialize_managers(rf)
    return generate_entry_drivers(rf, analysis)


@dataclass(frozen=True)
class AnalysisResult:
    framework: RewrittenFramework
    graph: CallGraph
    map: PermissionMap
    points_to: Optional[PointsToState] = None


def analyze(fw: FrameworkModel, analysis: str = "cha", options: RewriteOptions = RewriteOptions(),
            max_descent: Optional[int] = None, timeout: Optional[float] = 60.0,
            condensation: bool = True) -> AnalysisResult:
    rf = prepare(fw, analysis, options)
    state = None
    timed_out = False
    if analysis == "cha":
        graph = build_cha(rf)
    else:
        state, graph = build_pta(rf, timeout=timeout)
        timed_out = state.timed_out
    pm = extract_and_propagate(graph, rf, analysis, max_descent, condensation, timed_out)
    return AnalysisResult(rf, graph, pm, state)


def build_map(fw: FrameworkModel, analysis: str = "cha", options: RewriteOptions = RewriteOptions(),
              max_descent: Optional[int] = None, timeout: Optional[float] = 60.0) -> PermissionMap:
    return analyze(fw, analysis, options, max_descent, timeout).map
