"""Brute-force reference answers used to cross-check the production analyses.

Nothing here touches the production call-graph, hierarchy or propagation
code: dispatch is re-derived from the class table with plain loops, and
permissions are gathered by a separate recursive search from each entry
point with no sharing between entry points and no condensation.
"""

from __future__ import annotations

import sys
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .ir import (
    ClearIdentity, FrameworkModel, MethodRef, RestoreIdentity, StaticCall, Transact, VirtualCall,
    pep_param_index,
)
from .rewrite import RewrittenFramework
from .strings import resolve_permission

MAX_METHODS = 200


class OracleTooLarge(ValueError):
    pass


def _size(model: FrameworkModel) -> int:
    return sum(len(c.methods) for name, c in model.classes.items() if not name.startswith("$synthetic."))


def _superclass_chain(model: FrameworkModel, cls: str) -> List[str]:
    chain = []
    while cls in model.classes and cls not in chain:
        chain.append(cls)
        parent = model.classes[cls].superclass
        if parent is None:
            break
        cls = parent
    return chain


def _is_subtype(model: FrameworkModel, sub: str, sup: str) -> bool:
    if sub == sup:
        return True
    c = model.classes.get(sub)
    if c is None:
        return False
    parents = ([c.superclass] if c.superclass else []) + list(c.interfaces)
    return any(_is_subtype(model, p, sup) for p in parents)


def _find(model: FrameworkModel, cls: str, sig) -> Optional[MethodRef]:
    for c in _superclass_chain(model, cls):
        m = model.classes[c].methods.get(sig)
        if m is not None and not m.abstract:
            return MethodRef(c, sig)
        if sig.name == "<init>":
            return None
    return None


def naive_targets(model: FrameworkModel, stmt) -> Set[MethodRef]:
    """Class-hierarchy dispatch computed from scratch for one call statement."""
    if isinstance(stmt, Transact):
        return {MethodRef(c, s) for c, cd in model.classes.items() for s, m in cd.methods.items()
                if s.name == "onTransact" and not m.abstract}
    ref = stmt.method
    if isinstance(stmt, StaticCall):
        hit = _find(model, ref.cls, ref.sig)
        return {hit} if hit else set()
    if ref.sig.name == "<init>":
        c = model.classes.get(ref.cls)
        m = c.methods.get(ref.sig) if c else None
        return {ref} if m is not None and not m.abstract else set()
    out = set()
    for c in model.classes:
        if _is_subtype(model, c, ref.cls):
            hit = _find(model, c, ref.sig)
            if hit is not None:
                out.add(hit)
    return out


def _region_indices(body) -> Set[int]:
    inside, depth = set(), False
    for i, stmt in enumerate(body):
        if isinstance(stmt, ClearIdentity):
            depth = True
        elif isinstance(stmt, RestoreIdentity):
            depth = False
        elif depth:
            inside.add(i)
    return inside


class _Oracle:
    def __init__(self, rf: RewrittenFramework, graph_edges: Optional[Iterable[Tuple[MethodRef, int, MethodRef]]],
                 max_descent: Optional[int]):
        self.rf = rf
        self.model = rf.model
        self.max_descent = max_descent
        self.edges: Optional[Dict[Tuple[MethodRef, int], List[MethodRef]]] = None
        if graph_edges is not None:
            self.edges = {}
            for caller, idx, callee in graph_edges:
                self.edges.setdefault((caller, idx), []).append(callee)

    def callees(self, ref: MethodRef, idx: int, stmt) -> List[MethodRef]:
        if self.edges is not None:
            return sorted(self.edges.get((ref, idx), []), key=str)
        if not isinstance(stmt, (VirtualCall, StaticCall, Transact)):
            return []
        return sorted(naive_targets(self.model, stmt), key=str)

    def collect(self, entry: MethodRef) -> Set[str]:
        found: Set[str] = set()
        seen: Set[MethodRef] = set()

        def walk(ref: MethodRef, frames: List[Tuple[MethodRef, int]]) -> None:
            seen.add(ref)
            body = self.model.method(ref).body
            skip = _region_indices(body) if self.rf.identity_enabled else set()
            for i, stmt in enumerate(body):
                if i in skip:
                    continue
                if pep_param_index(stmt) is not None:
                    r = resolve_permission(self.model, frames + [(ref, i)], max_descent=self.max_descent)
                    found.update(r.permissions)
                for callee in self.callees(ref, i, stmt):
                    if callee not in seen:
                        walk(callee, frames + [(ref, i)])

        walk(entry, [])
        return found


def oracle_permissions(rf: RewrittenFramework, entry: MethodRef, graph_edges=None,
                       max_descent: Optional[int] = None) -> Set[str]:
    """Permissions checked anywhere below ``entry``, outside identity regions.

    With ``graph_edges`` the search follows those edges (used to check maps
    built on a points-to call graph); otherwise it dispatches by class
    hierarchy on its own.
    """
    n = _size(rf.model)
    if n > MAX_METHODS:
        raise OracleTooLarge(f"oracle limited to {MAX_METHODS} methods, model has {n}")
    if rf.model.method(entry) is None:
        raise KeyError(f"unknown entry point {entry}")
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10_000))
    try:
        return _Oracle(rf, graph_edges, max_descent).collect(entry)
    finally:
        sys.setrecursionlimit(limit)


def oracle_map(rf: RewrittenFramework, entries: Iterable[MethodRef], graph_edges=None,
               max_descent: Optional[int] = None) -> Dict[str, Set[str]]:
    return {str(e): oracle_permissions(rf, e, graph_edges, max_descent) for e in entries}
