"""Permission extraction and propagation over a call graph.

Step 1 walks the graph once from the synthetic main with a global visited
set and resolves the permission at each enforcement point using the current
DFS stack.  Step 2 condenses strongly connected components (Tarjan).  Step 3
accumulates permissions over the condensed DAG in reverse topological order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

from .callgraph import CallGraph
from .ir import FrameworkModel, MethodRef, entry_points, is_synthetic, pep_param_index
from .pbir import format_framework
from .rewrite import RewrittenFramework
from .strings import ENTRY_PARAMETER, UNRESOLVED, PermissionResolution, ResolutionHistogram, resolve_permission

TIMEOUT = "TIMEOUT"


def framework_hash(fw: FrameworkModel) -> str:
    return hashlib.sha256(format_framework(fw).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PermissionMap:
    framework: str
    hash: str
    analysis: str
    rewrites: Tuple[str, ...]
    per_entry: Mapping[str, FrozenSet[str]]
    timeouts: FrozenSet[str] = frozenset()
    universe: Tuple[str, ...] = ()
    unsound: Tuple[Mapping[str, str], ...] = ()
    resolutions: Tuple[Mapping, ...] = ()

    @property
    def entries(self) -> List[str]:
        return sorted(set(self.per_entry) | set(self.timeouts))

    def permissions(self, entry: str) -> Optional[FrozenSet[str]]:
        """The entry's set, or None when its analysis timed out."""
        if entry in self.timeouts:
            return None
        return self.per_entry[entry]

    def to_json(self) -> dict:
        m: Dict[str, object] = {e: sorted(p) for e, p in self.per_entry.items()}
        m.update({e: TIMEOUT for e in self.timeouts})
        return {
            "framework": self.framework,
            "hash": self.hash,
            "analysis": self.analysis,
            "rewrites": list(self.rewrites),
            "map": dict(sorted(m.items())),
            "unsound": sorted((dict(u) for u in self.unsound), key=lambda u: json.dumps(u, sort_keys=True)),
            "universe": sorted(self.universe),
            "resolutions": sorted((dict(r) for r in self.resolutions), key=lambda r: r["site"]),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "PermissionMap":
        per_entry, timeouts = {}, set()
        for sig, perms in data["map"].items():
            if perms == TIMEOUT:
                timeouts.add(sig)
            else:
                per_entry[sig] = frozenset(perms)
        return cls(data["framework"], data["hash"], data["analysis"], tuple(data.get("rewrites", ())),
                   per_entry, frozenset(timeouts), tuple(data.get("universe", ())),
                   tuple(data.get("unsound", ())), tuple(data.get("resolutions", ())))

    @classmethod
    def loads(cls, text: str) -> "PermissionMap":
        return cls.from_json(json.loads(text))


@dataclass(frozen=True)
class CondensedGraph:
    scc_id: Mapping[MethodRef, int]
    members: Tuple[Tuple[MethodRef, ...], ...]
    dag: Mapping[int, FrozenSet[int]]
    component_perms: Mapping[int, FrozenSet[str]] = field(default_factory=dict)

    def is_acyclic(self) -> bool:
        # Tarjan numbers components in reverse topological order: successors come first.
        return all(t < c for c, succ in self.dag.items() for t in succ)


@dataclass
class Extraction:
    """Result of step 1."""

    visited: List[MethodRef]
    own: Dict[MethodRef, Set[str]]
    resolutions: List[PermissionResolution]
    visits: Dict[MethodRef, int]


def live_successors(g: CallGraph, rf: RewrittenFramework, node: MethodRef) -> List[Tuple[int, MethodRef]]:
    """Out-edges whose call site is not inside an identity region."""
    if not rf.identity_enabled:
        return g.out_edges(node)
    return [(i, t) for i, t in g.out_edges(node) if not rf.in_region(node, i)]


def pep_sites(rf: RewrittenFramework, ref: MethodRef) -> List[int]:
    m = rf.model.method(ref)
    out = []
    for i, stmt in enumerate(m.body):
        if pep_param_index(stmt) is None:
            continue
        if rf.identity_enabled and rf.in_region(ref, i):
            continue
        out.append(i)
    return out


def extract(g: CallGraph, rf: RewrittenFramework, max_descent: Optional[int] = None) -> Extraction:
    """DFS with one global visited set; every node is analyzed at most once."""
    root = rf.synthetic_main
    visits: Dict[MethodRef, int] = {}
    own: Dict[MethodRef, Set[str]] = {}
    resolutions: List[PermissionResolution] = []
    order: List[MethodRef] = []

    def visit(node: MethodRef, frames: List[Tuple[MethodRef, int]]) -> None:
        visits[node] = visits.get(node, 0) + 1
        order.append(node)
        found: Set[str] = set()
        for i in pep_sites(rf, node):
            r = resolve_permission(rf.model, frames + [(node, i)], max_descent=max_descent)
            resolutions.append(r)
            found |= r.permissions
        own[node] = found

    # iterative DFS keeping the call stack for string resolution
    visit(root, [])
    path: List[Tuple[MethodRef, int]] = []
    stack = [(root, iter(live_successors(g, rf, root)))]
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            if path:
                path.pop()
            continue
        idx, callee = nxt
        if callee in visits:
            continue
        path.append((node, idx))
        visit(callee, list(path))
        stack.append((callee, iter(live_successors(g, rf, callee))))
    return Extraction(order, own, resolutions, visits)


def tarjan(nodes: Sequence, succ) -> List[List]:
    """Strongly connected components, emitted in reverse topological order (iterative)."""
    index: Dict = {}
    low: Dict = {}
    on_stack: Set = set()
    stack: List = []
    comps: List[List] = []
    counter = 0
    for start in nodes:
        if start in index:
            continue
        work = [(start, iter(succ(start)))]
        index[start] = low[start] = counter
        counter += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    return comps


def condense(nodes: Sequence[MethodRef], succ, own: Mapping[MethodRef, Set[str]]) -> CondensedGraph:
    comps = tarjan(nodes, succ)
    scc_id = {n: cid for cid, comp in enumerate(comps) for n in comp}
    dag: Dict[int, Set[int]] = {cid: set() for cid in range(len(comps))}
    perms: Dict[int, FrozenSet[str]] = {}
    for cid, comp in enumerate(comps):
        acc: Set[str] = set()
        for n in comp:
            acc |= own.get(n, set())
            for t in succ(n):
                tid = scc_id[t]
                if tid != cid:
                    dag[cid].add(tid)
        for tid in dag[cid]:
            acc |= perms[tid]
        perms[cid] = frozenset(acc)
    members = tuple(tuple(sorted(c, key=str)) for c in comps)
    return CondensedGraph(scc_id, members, {c: frozenset(s) for c, s in dag.items()}, perms)


def _fixpoint(nodes: Sequence[MethodRef], succ, own) -> Dict[MethodRef, FrozenSet[str]]:
    """Propagation without condensation: iterate until no set grows."""
    perms = {n: set(own.get(n, ())) for n in nodes}
    changed = True
    while changed:
        changed = False
        for n in nodes:
            acc = perms[n]
            before = len(acc)
            for t in succ(n):
                acc |= perms[t]
            if len(acc) != before:
                changed = True
    return {n: frozenset(p) for n, p in perms.items()}


def extract_and_propagate(g: CallGraph, rf: RewrittenFramework, analysis: Optional[str] = None,
                          max_descent: Optional[int] = None, condensation: bool = True,
                          timed_out: bool = False) -> PermissionMap:
    analysis = analysis or rf.mode or "cha"
    ex = extract(g, rf, max_descent)
    visited = set(ex.visited)
    nodes = sorted(visited, key=str)

    def succ(n: MethodRef) -> List[MethodRef]:
        return sorted({t for _, t in live_successors(g, rf, n) if t in visited}, key=str)

    if condensation:
        cg = condense(nodes, succ, ex.own)
        node_perms = {n: cg.component_perms[cg.scc_id[n]] for n in nodes}
    else:
        node_perms = _fixpoint(nodes, succ, ex.own)

    unsound: List[Dict[str, str]] = [dict(u) for u in rf.unsound]
    entries = [e for e in entry_points(rf.model, analysis) if not is_synthetic(e.cls)]
    per_entry: Dict[str, FrozenSet[str]] = {}
    timeouts: Set[str] = set()
    for e in entries:
        key = str(e)
        if timed_out:
            timeouts.add(key)
            continue
        if e not in visited:
            unsound.append({"kind": "unreached-entry", "site": key, "detail": ""})
        per_entry[key] = node_perms.get(e, frozenset())
    for r in ex.resolutions:
        if r.category == UNRESOLVED:
            unsound.append({"kind": "unresolved-permission", "site": f"{r.pep_site[0]}@{r.pep_site[1]}",
                            "detail": r.reason})
            if r.reason.startswith(ENTRY_PARAMETER):
                unsound.append({"kind": "parameter-dependent-entry",
                                "site": r.reason[len(ENTRY_PARAMETER):].strip(), "detail": ""})
    for caller, idx, ref in g.dangling:
        unsound.append({"kind": "dangling-dispatch", "site": f"{caller}@{idx}", "detail": str(ref)})
    for caller, idx in g.suppressed:
        unsound.append({"kind": "suppressed-call", "site": f"{caller}@{idx}",
                        "detail": "receiver points to no object"})
    if timed_out:
        unsound.append({"kind": "timeout", "site": "", "detail": "points-to analysis stopped early"})
    return PermissionMap(
        framework=rf.base.name,
        hash=framework_hash(rf.base),
        analysis=analysis,
        rewrites=tuple(rf.rewrites),
        per_entry=per_entry,
        timeouts=frozenset(timeouts),
        universe=tuple(sorted(rf.base.permissions)),
        unsound=tuple(unsound),
        resolutions=tuple(r.to_json() for r in ex.resolutions),
    )


@dataclass(frozen=True)
class LinearityStats:
    visits: Mapping[MethodRef, int]

    @property
    def total(self) -> int:
        return sum(self.visits.values())

    @property
    def max_visits(self) -> int:
        return max(self.visits.values(), default=0)

    @property
    def linear(self) -> bool:
        return self.max_visits <= 1


def assert_linear(g: CallGraph, rf: RewrittenFramework) -> LinearityStats:
    """Instrumented step 1: per-node visit counts (each must be at most 1)."""
    stats = LinearityStats(dict(extract(g, rf).visits))
    if not stats.linear:
        worst = max(stats.visits, key=lambda n: stats.visits[n])
        raise AssertionError(f"{worst} analyzed {stats.visits[worst]} times")
    return stats


def resolution_histogram(pm: PermissionMap) -> ResolutionHistogram:
    """Category histogram rebuilt from the resolutions stored in a map."""
    hist = ResolutionHistogram()
    hist.total = len(pm.resolutions)
    for r in pm.resolutions:
        hist.by_category[r["category"]] += 1
        n = len(r["permissions"])
        if n:
            hist.by_count["1" if n == 1 else "2" if n == 2 else ">2"] += 1
    return hist
