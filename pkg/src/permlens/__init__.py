"""Permission maps for PBIR framework models and permission-gap checks for apps."""

from .gap import (
    AccessMatrix, AccessVector, AppDiscarded, GapReport, MapDiff, MapMismatch, analyze_app, build_matrix,
    diff_maps, extract_av, infer_permissions,
)
from .ir import AppModel, FrameworkModel, MethodRef, MethodSig, PBIRError, entry_points
from .pbir import format_app, format_framework, parse_app, parse_framework
from .pipeline import RewriteOptions, analyze, build_map, prepare
from .propagate import PermissionMap, extract_and_propagate

__version__ = "0.1.0"

__all__ = [
    "AccessMatrix", "AccessVector", "AppDiscarded", "AppModel", "FrameworkModel", "GapReport", "MapDiff",
    "MapMismatch", "MethodRef", "MethodSig", "PBIRError", "PermissionMap", "RewriteOptions", "analyze",
    "analyze_app", "build_map", "build_matrix", "diff_maps", "entry_points", "extract_and_propagate",
    "extract_av", "format_app", "format_framework", "infer_permissions", "parse_app", "parse_framework",
    "prepare",
]
