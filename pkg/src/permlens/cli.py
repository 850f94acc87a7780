"""``permlens`` command line: build maps, check apps, compare maps, run the fixture suite.

Exit codes: 0 success, 1 permission gap found (or fixture mismatch),
2 app discarded, 3 input or pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import report
from .corpus import CorpusSpec, default_seed, generate_corpus
from .gap import GapReport, MapMismatch, analyze_app, build_matrix, diff_maps
from .ir import FrameworkModel, PBIRError, entry_points, is_synthetic
from .oracle import oracle_map
from .pbir import parse_app, parse_framework
from .pipeline import ANALYSES, AnalysisResult, RewriteOptions, analyze
from .propagate import PermissionMap, assert_linear, framework_hash

EXIT_OK, EXIT_GAP, EXIT_DISCARDED, EXIT_ERROR = 0, 1, 2, 3
FORMATS = ("json", "text")


class StageError(Exception):
    """A failure attributed to one pipeline stage (parse, rewrite, map, ...)."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


@dataclass(frozen=True)
class RunConfig:
    framework: Optional[Path] = None
    apps: Tuple[Path, ...] = ()
    analysis: str = "cha"
    rewrites: RewriteOptions = RewriteOptions()
    max_descent: Optional[int] = None
    timeout: float = 60.0
    out: Optional[Path] = None
    format: str = "text"
    jobs: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.analysis not in ANALYSES:
            raise StageError("config", f"analysis must be one of {', '.join(ANALYSES)}, got {self.analysis!r}")
        if not self.timeout > 0:
            raise StageError("config", f"timeout must be positive, got {self.timeout}")
        if self.format not in FORMATS:
            raise StageError("config", f"format must be json or text, got {self.format!r}")
        if self.max_descent is not None and self.max_descent < 0:
            raise StageError("config", "max-descent must be non-negative")
        if self.jobs < 1:
            raise StageError("config", "jobs must be at least 1")


def _read(path: Path, stage: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StageError(stage, f"cannot read {path}: {exc.strerror or exc}") from exc


def load_framework(path: Path) -> FrameworkModel:
    try:
        return parse_framework(_read(path, "parse"), str(path))
    except PBIRError as exc:
        raise StageError("parse", str(exc)) from exc


def load_map(path: Path) -> PermissionMap:
    try:
        return PermissionMap.loads(_read(path, "map"))
    except (ValueError, KeyError, TypeError) as exc:
        raise StageError("map", f"{path} is not a permission map: {exc}") from exc


def _write(cfg: RunConfig, name: str, text: str) -> None:
    if cfg.out is None:
        return
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / name).write_text(text, encoding="utf-8")


def _stem(path: Path) -> str:
    return Path(path).name.rsplit(".", 1)[0]


# --- build-map -----------------------------------------------------------------

def run_pipeline(cfg: RunConfig, fw: FrameworkModel) -> AnalysisResult:
    try:
        return analyze(fw, cfg.analysis, cfg.rewrites, cfg.max_descent, cfg.timeout)
    except (PBIRError, ValueError) as exc:
        raise StageError("pipeline", str(exc)) from exc


def cmd_build_map(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    cfg.validate()
    fw = load_framework(cfg.framework)
    result = run_pipeline(cfg, fw)
    pm = result.map
    base = f"{_stem(cfg.framework)}.{cfg.analysis}"
    _write(cfg, f"{base}.map.json", pm.dumps())
    _write(cfg, f"{base}.entries.tsv", report.to_tsv(("entry_point", "permissions"), report.map_rows(pm)))
    _write(cfg, f"{base}.sizes.tsv", report.to_tsv(report.SIZE_HEADER, report.size_rows(pm)))
    _write(cfg, f"{base}.resolutions.tsv", report.to_tsv(("category", "count", "percent"), report.resolution_rows(pm)))
    if cfg.out is not None:
        report.plot_sizes(pm, cfg.out / f"{base}.sizes.png")
    if cfg.extra.get("dump_suppressed"):
        lines = [f"{caller}@{idx}" for caller, idx in sorted(result.graph.suppressed, key=lambda s: (str(s[0]), s[1]))]
        _write(cfg, f"{base}.suppressed.txt", "".join(line + "\n" for line in lines))
        for line in lines:
            print(f"suppressed: {line}", file=sys.stderr)
    if cfg.extra.get("dump_callgraph"):
        _write(cfg, f"{base}.callgraph.dot", result.graph.to_dot())
    for d in result.graph.diagnostics:
        print(f"permlens: callgraph: {d.message}", file=sys.stderr)

    if cfg.format == "json":
        out.write(pm.dumps())
    else:
        out.write(f"{pm.framework} [{pm.analysis}] {len(pm.entries)} entry points\n")
        out.write(report.size_summary(pm) + "\n")
        if cfg.extra.get("verbose"):
            out.write(report.to_text(("entry_point", "permissions"), report.map_rows(pm)))
    return EXIT_OK


# --- analyze-app ---------------------------------------------------------------

def _map_for(cfg: RunConfig, fw: FrameworkModel, map_path: Optional[Path]) -> PermissionMap:
    if map_path is None:
        return run_pipeline(cfg, fw).map
    pm = load_map(map_path)
    if pm.hash != framework_hash(fw):
        raise StageError("map", f"{map_path} was built from a different framework than {cfg.framework}")
    return pm


def analyze_apps(cfg: RunConfig, fw: FrameworkModel, pm: PermissionMap) -> List[GapReport]:
    matrix = build_matrix(pm)
    texts = [(p, _read(p, "parse")) for p in cfg.apps]

    def one(item) -> GapReport:
        path, text = item
        try:
            app = parse_app(text, str(path), fw)
        except PBIRError as exc:
            raise StageError("parse", str(exc)) from exc
        return analyze_app(app, fw, pm, matrix)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            reports = list(pool.map(one, texts))
    else:
        reports = [one(t) for t in texts]
    return sorted(reports, key=lambda r: r.app)


def batch_exit_code(reports: Sequence[GapReport]) -> int:
    return max((r.exit_code for r in reports), default=EXIT_OK)


def cmd_analyze_app(cfg: RunConfig, map_path: Optional[Path], out=None) -> int:
    out = out or sys.stdout
    cfg.validate()
    if not cfg.apps:
        raise StageError("config", "no app files given")
    fw = load_framework(cfg.framework)
    pm = _map_for(cfg, fw, map_path)
    reports = analyze_apps(cfg, fw, pm)
    names = [r.app for r in reports]
    if len(set(names)) != len(names):
        raise StageError("parse", "app names must be unique within a batch")

    rows = [(r.app, ",".join(sorted(r.declared)), ",".join(sorted(r.inferred)), ",".join(sorted(r.gap)),
             "discarded: " + r.reason if r.discarded else "ok") for r in reports]
    header = ("app", "declared", "inferred", "gap", "status")
    for r in reports:
        _write(cfg, f"{r.app}.gap.json", r.dumps())
    _write(cfg, "gaps.tsv", report.to_tsv(header, rows))
    _write(cfg, "gap_histogram.tsv", report.to_tsv(("gap_size", "apps"), report.gap_histogram(reports)))
    if cfg.out is not None:
        report.plot_gap_histogram(reports, cfg.out / "gap_histogram.png")

    if cfg.format == "json":
        out.write(json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n")
    else:
        out.write(report.to_text(header, rows))
        out.write("\n" + report.to_text(("gap_size", "apps"), report.gap_histogram(reports)))
    return batch_exit_code(reports)


# --- diff-maps -----------------------------------------------------------------

def cmd_diff_maps(cfg: RunConfig, a_path: Path, b_path: Path, out=None) -> int:
    out = out or sys.stdout
    cfg.validate()
    a, b = load_map(a_path), load_map(b_path)
    try:
        d = diff_maps(a, b)
    except MapMismatch as exc:
        raise StageError("diff", str(exc)) from exc
    header = ("class", "entry_points", "percent")
    _write(cfg, "diff.json", json.dumps(d.to_json(), indent=2, sort_keys=True) + "\n")
    _write(cfg, "diff.tsv", report.to_tsv(header, report.diff_rows(d)))
    if cfg.out is not None:
        report.plot_diff(d, cfg.out / "diff.png", (f"a ({a.analysis})", f"b ({b.analysis})"))
    if cfg.format == "json":
        out.write(json.dumps(d.to_json(), indent=2, sort_keys=True) + "\n")
    else:
        out.write(report.to_text(header, report.diff_rows(d)))
        for label, items in (("only in a", d.only_a), ("only in b", d.only_b), ("inconclusive", d.inconclusive)):
            if items:
                out.write(f"{label}: {', '.join(items)}\n")
    return EXIT_OK


# --- fixtures ------------------------------------------------------------------

FIXTURE_FRAMEWORKS = ("worked", "binder", "account", "identity", "strings", "gui")


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("permlens") / "fixtures" / f"{name}.pbir"))


def _oracle_check(fw: FrameworkModel, analysis: str) -> List[str]:
    """Entry points where the production map and the oracle disagree."""
    r = analyze(fw, analysis)
    entries = [e for e in entry_points(r.framework.model, analysis) if not is_synthetic(e.cls)]
    expected = oracle_map(r.framework, entries, None if analysis == "cha" else r.graph.edges)
    bad = [e for e, perms in expected.items() if r.map.per_entry.get(e) != frozenset(perms)]
    assert_linear(r.graph, r.framework)
    return bad


def cmd_fixtures_run(count: int, seed: int, out=None) -> int:
    out = out or sys.stdout
    """Oracle equivalence over the shipped fixtures and a seeded random corpus."""
    frameworks = [(name, load_framework(fixture_path(name))) for name in FIXTURE_FRAMEWORKS]
    corpus = generate_corpus(CorpusSpec(seed=seed, count=count, apps=0))
    frameworks += [(f"random-{i}", item.framework) for i, item in enumerate(corpus)]
    start = time.perf_counter()
    failures = 0
    subset_violations = 0
    for name, fw in frameworks:
        for analysis in ANALYSES:
            bad = _oracle_check(fw, analysis)
            if bad:
                failures += 1
                out.write(f"MISMATCH {name} [{analysis}]: {', '.join(bad)}\n")
        cha, pta = analyze(fw, "cha").map, analyze(fw, "pta").map
        for e in pta.per_entry:
            if e in cha.per_entry and not pta.per_entry[e] <= cha.per_entry[e]:
                subset_violations += 1
                out.write(f"PRECISION {name}: pta set of {e} exceeds cha\n")
    elapsed = time.perf_counter() - start
    out.write(f"{len(frameworks)} frameworks (seed {seed}), {failures} oracle mismatches, "
              f"{subset_violations} pta/cha violations, {elapsed:.1f}s\n")
    return EXIT_OK if failures == 0 and subset_violations == 0 else EXIT_GAP


# --- argument parsing ----------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=FORMATS, default="text", help="stdout format (default text)")
    p.add_argument("--out", type=Path, help="directory for JSON, TSV and figure files")


def _add_analysis(p: argparse.ArgumentParser) -> None:
    p.add_argument("--analysis", choices=ANALYSES, default="cha")
    p.add_argument("--no-redirect", action="store_true", help="keep proxy/stub indirection")
    p.add_argument("--no-identity", action="store_true", help="ignore clear/restore identity regions")
    p.add_argument("--no-service-init", action="store_true", help="pta: skip service singleton initialization")
    p.add_argument("--no-manager-init", action="store_true", help="pta: skip manager field initialization")
    p.add_argument("--empty", action="append", default=[], metavar="GLOB",
                   help="empty the bodies of matching classes (repeatable)")
    p.add_argument("--max-descent", type=int, metavar="N", help="limit parameter descent in string resolution")
    p.add_argument("--timeout", type=float, default=60.0, metavar="SECS", help="points-to solver budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permlens", description="Permission maps and permission gaps for PBIR models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="compute the entry point to permission map of a framework")
    p.add_argument("framework", type=Path)
    _add_analysis(p)
    _add_common(p)
    p.add_argument("--dump-suppressed", action="store_true", help="list call sites with empty receivers")
    p.add_argument("--dump-callgraph", action="store_true", help="write the call graph as DOT into --out")
    p.add_argument("-v", "--verbose", action="store_true", help="print the per-entry table")

    p = sub.add_parser("analyze-app", help="infer required permissions and gaps of apps")
    p.add_argument("framework", type=Path)
    p.add_argument("apps", type=Path, nargs="+")
    p.add_argument("--map", type=Path, help="prebuilt map (default: build one with the flags below)")
    p.add_argument("--jobs", type=int, default=1)
    _add_analysis(p)
    _add_common(p)

    p = sub.add_parser("diff-maps", help="classify per-entry differences between two maps")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    _add_common(p)

    p = sub.add_parser("fixtures", help="shipped fixtures and the oracle suite")
    fsub = p.add_subparsers(dest="fixtures_command", required=True)
    r = fsub.add_parser("run", help="check production maps against the brute-force oracle")
    r.add_argument("--count", type=int, default=100, help="random frameworks to generate")
    r.add_argument("--seed", type=int, help="corpus seed (default: $PERMLENS_SEED or 0)")
    fsub.add_parser("list", help="print the paths of the shipped fixtures")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    rewrites = RewriteOptions(
        redirect=not getattr(args, "no_redirect", False),
        identity=not getattr(args, "no_identity", False),
        service_init=not getattr(args, "no_service_init", False),
        manager_init=not getattr(args, "no_manager_init", False),
        empty=tuple(getattr(args, "empty", ())),
    )
    return RunConfig(
        framework=getattr(args, "framework", None),
        apps=tuple(getattr(args, "apps", ())),
        analysis=getattr(args, "analysis", "cha"),
        rewrites=rewrites,
        max_descent=getattr(args, "max_descent", None),
        timeout=getattr(args, "timeout", 60.0),
        out=getattr(args, "out", None),
        format=getattr(args, "format", "text"),
        jobs=getattr(args, "jobs", 1),
        extra={"dump_suppressed": getattr(args, "dump_suppressed", False),
               "dump_callgraph": getattr(args, "dump_callgraph", False),
               "verbose": getattr(args, "verbose", False)},
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    try:
        if args.command == "build-map":
            return cmd_build_map(cfg)
        if args.command == "analyze-app":
            return cmd_analyze_app(cfg, args.map)
        if args.command == "diff-maps":
            return cmd_diff_maps(cfg, args.a, args.b)
        if args.fixtures_command == "list":
            for name in sorted(p.name for p in fixture_path("worked").parent.glob("*.pbir")):
                print(fixture_path(name[:-5]))
            return EXIT_OK
        if args.count < 0:
            raise StageError("config", "count must be non-negative")
        seed = args.seed if args.seed is not None else default_seed()
        return cmd_fixtures_run(args.count, seed)
    except StageError as exc:
        print(f"permlens: {exc.stage} error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
