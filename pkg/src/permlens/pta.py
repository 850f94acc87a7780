"""Andersen-style points-to analysis with on-the-fly call-graph construction.

Field-sensitive, flow-insensitive, context-insensitive.  The solver uses
difference propagation: only newly discovered allocation sites travel along
subset edges.  Virtual calls dispatch on the exact type of each receiver
allocation site, so a call whose receiver points to nothing yields no edge.
"""

from __future__ import annotations

import random
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

from .callgraph import CallGraph, Edge, provenance_of
from .hierarchy import Hierarchy
from .ir import (
    STRING, STRING_ARRAY, Alloc, Copy, Diagnostic, FieldLoad, FieldStore, FrameworkModel, Lit, MethodRef,
    Opaque, Return, StaticCall, StaticLoad, StaticStore, StringArrayConst, StringConst, Transact,
    VirtualCall, is_synthetic, pep_param_index,
)
from .rewrite import RewrittenFramework

UNKNOWN_TYPE = "?"
RET = "$ret"

Var = Tuple[MethodRef, str]


@dataclass(frozen=True)
class AllocationSite:
    method: MethodRef
    index: int
    slot: int = -1  # -1: the statement itself; k >= 0: literal argument k of a call
    type: str = field(default="", compare=False)
    synthetic: bool = field(default=False, compare=False)
    literal: Optional[str] = field(default=None, compare=False)

    @property
    def id(self) -> str:
        base = f"{self.method}@{self.index}"
        return base if self.slot < 0 else f"{base}#{self.slot}"

    def __str__(self) -> str:
        return self.id

    def __lt__(self, other: "AllocationSite") -> bool:
        return (str(self.method), self.index, self.slot) < (str(other.method), other.index, other.slot)


@dataclass(frozen=True)
class PointsToState:
    model: FrameworkModel
    var_pts: Mapping[Var, FrozenSet[AllocationSite]]
    field_pts: Mapping[Tuple[AllocationSite, str], FrozenSet[AllocationSite]]
    static_pts: Mapping[Tuple[str, str], FrozenSet[AllocationSite]]
    call_edges: FrozenSet[Edge]
    reachable: FrozenSet[MethodRef]
    timed_out: bool = False

    def pts(self, method: MethodRef, local: str) -> FrozenSet[AllocationSite]:
        return self.var_pts.get((method, local), frozenset())

    def dump(self) -> List[str]:
        """``var -> {site ids}`` lines, sorted."""
        lines = []
        for (m, v), sites in self.var_pts.items():
            lines.append(f"{m}/{v} -> {{{', '.join(s.id for s in sorted(sites))}}}")
        for (o, f), sites in self.field_pts.items():
            lines.append(f"{o.id}.{f} -> {{{', '.join(s.id for s in sorted(sites))}}}")
        for (c, f), sites in self.static_pts.items():
            lines.append(f"{c}::{f} -> {{{', '.join(s.id for s in sorted(sites))}}}")
        return sorted(lines)


def _field_type(model: FrameworkModel, cls: str, name: str) -> Optional[str]:
    cur: Optional[str] = cls
    seen = set()
    while cur is not None and cur in model.classes and cur not in seen:
        seen.add(cur)
        c = model.classes[cur]
        if name in c.fields:
            return c.fields[name]
        cur = c.superclass
    return None


def dispatch(hier: Hierarchy, stmt, site: AllocationSite) -> List[MethodRef]:
    """Targets of ``stmt`` for one receiver object; [] when the object cannot receive the call."""
    if isinstance(stmt, Transact):
        return hier.lookup_by_name(site.type, "onTransact") if site.type in hier else []
    ref = stmt.method
    if site.type not in hier or not hier.is_subtype(site.type, ref.cls):
        return []
    if ref.name == "<init>":
        return hier.cha_targets(ref)
    hit = hier.lookup(site.type, ref.sig)
    return [hit] if hit is not None else []


class _Solver:
    def __init__(self, rf: RewrittenFramework, rng: Optional[random.Random], timeout: Optional[float]):
        self.rf = rf
        self.model = rf.model
        self.hier = Hierarchy(self.model.classes)
        self.rng = rng
        self.deadline = None if timeout is None else time.monotonic() + timeout
        self.pts: Dict[object, Set[AllocationSite]] = defaultdict(set)
        self.succ: Dict[object, Dict[object, Optional[str]]] = defaultdict(dict)
        self.loads: Dict[Var, List[Tuple[str, Var]]] = defaultdict(list)
        self.stores: Dict[Var, List[Tuple[str, Var]]] = defaultdict(list)
        self.calls: Dict[Var, List[Tuple[MethodRef, int]]] = defaultdict(list)
        self.work: deque = deque()
        self.reachable: Set[MethodRef] = set()
        self.edges: Dict[Edge, str] = {}
        self.diags: List[Diagnostic] = []
        self.steps = 0

    # -- constraint plumbing

    def accepts(self, site: AllocationSite, declared: Optional[str]) -> bool:
        return self.hier.compatible(site.type, declared)

    def add_pts(self, node, sites, declared: Optional[str] = None) -> None:
        cur = self.pts[node]
        new = {s for s in sites if s not in cur and self.accepts(s, declared)}
        if new:
            cur |= new
            self.work.append((node, frozenset(new)))

    def add_edge(self, src, dst, declared: Optional[str] = None) -> None:
        edges = self.succ[src]
        if dst in edges:
            return
        edges[dst] = declared
        if self.pts.get(src):
            self.add_pts(dst, self.pts[src], declared)

    def site(self, method: MethodRef, idx: int, typ: str, slot: int = -1, literal=None) -> AllocationSite:
        return AllocationSite(method, idx, slot, typ, is_synthetic(method.cls), literal)

    # -- methods and calls

    def reach(self, ref: MethodRef) -> None:
        if ref in self.reachable:
            return
        self.reachable.add(ref)
        m = self.model.method(ref)

        def v(name: str) -> Var:
            return (ref, name)

        for idx, stmt in enumerate(m.body):
            if isinstance(stmt, Alloc):
                self.add_pts(v(stmt.target), {self.site(ref, idx, stmt.cls)})
            elif isinstance(stmt, StringConst):
                self.add_pts(v(stmt.target), {self.site(ref, idx, STRING, literal=stmt.value)})
            elif isinstance(stmt, StringArrayConst):
                self.add_pts(v(stmt.target), {self.site(ref, idx, STRING_ARRAY)})
            elif isinstance(stmt, Opaque):
                self.add_pts(v(stmt.target), {self.site(ref, idx, UNKNOWN_TYPE)})
            elif isinstance(stmt, Copy):
                self.add_edge(v(stmt.source), v(stmt.target))
            elif isinstance(stmt, FieldLoad):
                self.loads[v(stmt.base)].append((stmt.field, v(stmt.target)))
                self.rescan(v(stmt.base))
            elif isinstance(stmt, FieldStore):
                self.stores[v(stmt.base)].append((stmt.field, v(stmt.source)))
                self.rescan(v(stmt.base))
            elif isinstance(stmt, StaticLoad):
                self.add_edge(("static", stmt.cls, stmt.field), v(stmt.target))
            elif isinstance(stmt, StaticStore):
                declared = self.model.classes[stmt.cls].static_fields.get(stmt.field)
                self.add_edge(v(stmt.source), ("static", stmt.cls, stmt.field), declared)
            elif isinstance(stmt, Return):
                if stmt.source is not None:
                    self.add_edge(v(stmt.source), (ref, RET), m.sig.ret)
            elif isinstance(stmt, StaticCall):
                hit = self.hier.lookup(stmt.method.cls, stmt.method.sig)
                if hit is not None:
                    self.connect(ref, idx, stmt, hit, None)
            elif isinstance(stmt, (VirtualCall, Transact)):
                self.calls[v(stmt.receiver)].append((ref, idx))
                self.rescan(v(stmt.receiver))
            # GetService / GetSystemService left in place evaluate to null: no objects.

    def rescan(self, var: Var) -> None:
        """Re-queue the current contents of ``var`` so a newly attached constraint sees them."""
        if self.pts.get(var):
            self.work.append((var, frozenset(self.pts[var])))

    def connect(self, caller: MethodRef, idx: int, stmt, callee: MethodRef,
                receiver: Optional[AllocationSite]) -> None:
        target = self.model.method(callee)
        if receiver is not None:
            self.add_pts((callee, "this"), {receiver})
        edge = (caller, idx, callee)
        if edge in self.edges:
            return
        self.edges[edge] = provenance_of(self.rf, caller, idx, stmt)
        self.reach(callee)
        args = stmt.args
        for k, pname in enumerate(target.param_names):
            if k >= len(args):
                break
            declared = callee.sig.params[k] if k < len(callee.sig.params) else None
            arg = args[k]
            if isinstance(arg, Lit):
                self.add_pts((callee, pname), {self.site(caller, idx, STRING, k, arg.value)}, declared)
            else:
                self.add_edge((caller, arg), (callee, pname), declared)
        if stmt.target is not None:
            self.add_edge((callee, RET), (caller, stmt.target))

    def on_receiver(self, var: Var, delta) -> None:
        for caller, idx in list(self.calls.get(var, ())):
            stmt = self.model.method(caller).body[idx]
            for o in sorted(delta):
                targets = dispatch(self.hier, stmt, o)
                if not targets and pep_param_index(stmt) is None and o.type in self.hier \
                        and isinstance(stmt, VirtualCall) and self.hier.is_subtype(o.type, stmt.method.cls):
                    self.diags.append(Diagnostic(
                        "warning", f"allocation site {o.id} of type {o.type} has no method {stmt.method.sig}"))
                for t in targets:
                    self.connect(caller, idx, stmt, t, o)

    # -- main loop

    def pop(self):
        if self.rng is not None and len(self.work) > 1:
            i = self.rng.randrange(len(self.work))
            self.work.rotate(-i)
            item = self.work.popleft()
            self.work.rotate(i)
            return item
        return self.work.popleft()

    def solve(self, root: MethodRef) -> bool:
        self.reach(root)
        while self.work:
            self.steps += 1
            if self.deadline is not None and self.steps % 256 == 0 and time.monotonic() > self.deadline:
                return False
            node, delta = self.pop()
            for dst, declared in list(self.succ.get(node, {}).items()):
                self.add_pts(dst, delta, declared)
            if isinstance(node, tuple) and len(node) == 2 and isinstance(node[0], MethodRef):
                for fname, target in list(self.loads.get(node, ())):
                    for o in delta:
                        self.add_edge(("field", o, fname), target)
                for fname, source in list(self.stores.get(node, ())):
                    for o in delta:
                        declared = _field_type(self.model, o.type, fname)
                        self.add_edge(source, ("field", o, fname), declared)
                if node in self.calls:
                    self.on_receiver(node, delta)
        return True


def build_pta(rf: RewrittenFramework, timeout: Optional[float] = 60.0,
              rng: Optional[random.Random] = None) -> Tuple[PointsToState, CallGraph]:
    """Solve the points-to constraints reachable from the synthetic main.

    ``rng`` randomizes worklist order (used to test order independence).
    On timeout the partial result is returned with ``timed_out`` set.
    """
    if timeout is not None and timeout <= 0:
        raise ValueError("timeout must be positive")
    main = rf.synthetic_main
    if rf.model.method(main) is None:
        raise ValueError("framework has no synthetic main; run the rewrite pipeline first")
    solver = _Solver(rf, rng, timeout)
    finished = solver.solve(main)

    var_pts, field_pts, static_pts = {}, {}, {}
    for node, sites in solver.pts.items():
        if not sites:
            continue
        if node[0] == "field":
            field_pts[(node[1], node[2])] = frozenset(sites)
        elif node[0] == "static":
            static_pts[(node[1], node[2])] = frozenset(sites)
        else:
            var_pts[node] = frozenset(sites)

    suppressed = []
    for ref in sorted(solver.reachable, key=str):
        for idx, stmt in enumerate(rf.model.method(ref).body):
            if isinstance(stmt, (VirtualCall, Transact)) and pep_param_index(stmt) is None \
                    and not var_pts.get((ref, stmt.receiver)):
                suppressed.append((ref, idx))
    diags = list(solver.diags)
    if not finished:
        diags.append(Diagnostic("warning", f"points-to analysis exceeded {timeout} s and was stopped"))
    state = PointsToState(rf.model, var_pts, field_pts, static_pts, frozenset(solver.edges),
                          frozenset(solver.reachable), not finished)
    nodes = set(solver.reachable)
    graph = CallGraph(frozenset(nodes), frozenset(solver.edges), frozenset({main}), dict(solver.edges), (),
                      tuple(suppressed), tuple(sorted(set(diags), key=str)))
    return state, graph


def resolve_call(state: PointsToState, caller: MethodRef, index: int) -> Set[MethodRef]:
    """Targets of the virtual call (or transact) at ``caller``'s statement ``index``."""
    m = state.model.method(caller)
    if m is None or not 0 <= index < len(m.body):
        raise KeyError(f"no statement {index} in {caller}")
    stmt = m.body[index]
    if not isinstance(stmt, (VirtualCall, Transact)):
        raise TypeError(f"statement {index} of {caller} is not a virtual call")
    hier = Hierarchy(state.model.classes)
    out: Set[MethodRef] = set()
    for o in state.pts(caller, stmt.receiver):
        out.update(dispatch(hier, stmt, o))
    return out
