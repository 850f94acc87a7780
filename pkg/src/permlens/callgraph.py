"""Call graphs and class-hierarchy (CHA) construction."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Set, Tuple

from .hierarchy import Hierarchy
from .ir import Diagnostic, MethodRef, StaticCall, Transact, VirtualCall, is_synthetic, pep_param_index
from .rewrite import RewrittenFramework

DISPATCH = "dispatch"
STATIC = "static"
REDIRECTED = "redirected"
SYNTHETIC_INIT = "synthetic-init"
PROVENANCES = (DISPATCH, STATIC, REDIRECTED, SYNTHETIC_INIT)

Edge = Tuple[MethodRef, int, MethodRef]
Site = Tuple[MethodRef, int]


def _edge_key(e: Edge):
    return (str(e[0]), e[1], str(e[2]))


@dataclass(frozen=True)
class CallGraph:
    nodes: FrozenSet[MethodRef]
    edges: FrozenSet[Edge]
    roots: FrozenSet[MethodRef]
    provenance: Mapping[Edge, str] = field(default_factory=dict)
    dangling: Tuple[Tuple[MethodRef, int, MethodRef], ...] = ()
    suppressed: Tuple[Site, ...] = ()
    diagnostics: Tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        succ: Dict[MethodRef, List[Tuple[int, MethodRef]]] = defaultdict(list)
        for caller, idx, callee in sorted(self.edges, key=_edge_key):
            succ[caller].append((idx, callee))
        object.__setattr__(self, "_succ", dict(succ))

    def out_edges(self, node: MethodRef) -> List[Tuple[int, MethodRef]]:
        """(call-site index, callee) pairs in deterministic order."""
        return self._succ.get(node, [])

    def successors(self, node: MethodRef) -> List[MethodRef]:
        return sorted({c for _, c in self.out_edges(node)}, key=str)

    def sorted_nodes(self) -> List[MethodRef]:
        return sorted(self.nodes, key=str)

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges, key=_edge_key)

    def without_sites(self, sites: Iterable[Site]) -> "CallGraph":
        drop = set(sites)
        edges = frozenset(e for e in self.edges if (e[0], e[1]) not in drop)
        prov = {e: p for e, p in self.provenance.items() if e in edges}
        return CallGraph(self.nodes, edges, self.roots, prov, self.dangling, self.suppressed, self.diagnostics)

    def to_lines(self) -> List[str]:
        """``caller -> callee [provenance]`` lines."""
        return [f"{c} -> {t} [{self.provenance.get((c, i, t), DISPATCH)}]"
                for c, i, t in self.sorted_edges()]

    def to_dot(self) -> str:
        ids = {n: f"n{i}" for i, n in enumerate(self.sorted_nodes())}
        out = ["digraph callgraph {"]
        for n, nid in ids.items():
            shape = ",shape=box" if n in self.roots else ""
            out.append(f'  {nid} [label="{_dot_escape(str(n))}"{shape}];')
        for c, i, t in self.sorted_edges():
            out.append(f'  {ids[c]} -> {ids[t]} [label="{i}:{self.provenance.get((c, i, t), DISPATCH)}"];')
        out.append("}")
        return "\n".join(out) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def provenance_of(rf: RewrittenFramework, caller: MethodRef, idx: int, stmt) -> str:
    if is_synthetic(caller.cls):
        return SYNTHETIC_INIT
    if (caller, idx) in rf.redirected_sites:
        return REDIRECTED
    if isinstance(stmt, StaticCall):
        return STATIC
    return DISPATCH


def transact_targets(hier: Hierarchy) -> List[MethodRef]:
    """Every concrete ``onTransact`` in the model: what a binder call may reach without type information."""
    out = []
    for cname, cls in hier.classes.items():
        for sig, m in cls.methods.items():
            if sig.name == "onTransact" and not m.abstract:
                out.append(MethodRef(cname, sig))
    return sorted(out, key=str)


def build_cha(rf: RewrittenFramework) -> CallGraph:
    """Worklist closure from the synthetic main, dispatching over declared-type cones."""
    model = rf.model
    main = rf.synthetic_main
    if model.method(main) is None:
        raise ValueError("framework has no synthetic main; run the rewrite pipeline first")
    hier = Hierarchy(model.classes)
    on_transact = None
    nodes: Set[MethodRef] = {main}
    edges: Dict[Edge, str] = {}
    dangling = []
    diags = []
    todo = [main]
    while todo:
        caller = todo.pop()
        m = model.method(caller)
        for idx, stmt in enumerate(m.body):
            if isinstance(stmt, VirtualCall):
                targets = hier.cha_targets(stmt.method)
            elif isinstance(stmt, StaticCall):
                hit = hier.lookup(stmt.method.cls, stmt.method.sig)
                targets = [hit] if hit is not None else []
            elif isinstance(stmt, Transact):
                if on_transact is None:
                    on_transact = transact_targets(hier)
                targets = on_transact
            else:
                continue
            if not targets:
                if isinstance(stmt, Transact) or pep_param_index(stmt) is not None:
                    continue
                dangling.append((caller, idx, stmt.method))
                diags.append(Diagnostic("warning", f"unresolved dispatch of {stmt.method} at {caller}@{idx}"))
                continue
            prov = provenance_of(rf, caller, idx, stmt)
            for t in targets:
                edges[(caller, idx, t)] = prov
                if t not in nodes:
                    nodes.add(t)
                    todo.append(t)
    dangling.sort(key=lambda d: (str(d[0]), d[1]))
    return CallGraph(frozenset(nodes), frozenset(edges), frozenset({main}), edges, tuple(dangling), (),
                     tuple(diags))


def reachable_from(g: CallGraph, root: MethodRef) -> Set[MethodRef]:
    if root not in g.nodes:
        raise KeyError(f"{root} is not a node of the call graph")
    seen = {root}
    stack = [root]
    while stack:
        for t in g.successors(stack.pop()):
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen
