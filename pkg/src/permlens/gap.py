"""Boolean permission calculus: IP = AV x M and the permission gap."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .hierarchy import Hierarchy
from .ir import AppModel, FrameworkModel, MethodRef, StaticCall, VirtualCall
from .propagate import PermissionMap

IDENTICAL = "identical"
A_SMALLER = "a-smaller"
B_SMALLER = "b-smaller"
INCOMPARABLE = "incomparable"
CLASSES = (IDENTICAL, A_SMALLER, B_SMALLER, INCOMPARABLE)


class AppDiscarded(Exception):
    def __init__(self, app: str, reason: str):
        self.app = app
        self.reason = reason
        super().__init__(f"app '{app}' discarded: {reason}")


class MapMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AccessMatrix:
    entry_order: Tuple[str, ...]
    perm_order: Tuple[str, ...]
    bits: np.ndarray
    timeouts: FrozenSet[str] = frozenset()

    def row(self, entry: str) -> np.ndarray:
        return self.bits[self.entry_order.index(entry)]

    def as_tuples(self) -> List[Tuple[int, ...]]:
        return [tuple(int(b) for b in r) for r in self.bits]


@dataclass(frozen=True)
class AccessVector:
    entry_order: Tuple[str, ...]
    bits: np.ndarray
    # entry -> framework call sites whose target was ambiguous and which set this bit
    ambiguous: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    def called(self) -> List[str]:
        return [e for e, b in zip(self.entry_order, self.bits) if b]

    def as_tuple(self) -> Tuple[int, ...]:
        return tuple(int(b) for b in self.bits)


def build_matrix(pm: PermissionMap) -> AccessMatrix:
    """Rows are entry points, columns permissions of the universe; both sorted."""
    entries = tuple(pm.entries)
    perms = tuple(sorted(set(pm.universe).union(*pm.per_entry.values())))
    col = {p: j for j, p in enumerate(perms)}
    bits = np.zeros((len(entries), len(perms)), dtype=bool)
    for i, e in enumerate(entries):
        for p in pm.per_entry.get(e, ()):
            bits[i, col[p]] = True
    return AccessMatrix(entries, perms, bits, frozenset(pm.timeouts))


def _app_roots(app: AppModel) -> List[MethodRef]:
    return [ref for ref, m in app.iter_methods()
            if app.classes[ref.cls].public and m.public and not m.abstract]


def extract_av(app: AppModel, fw: FrameworkModel, entry_order: Sequence[str]) -> AccessVector:
    """Mark the entry points the app's reachable code calls.

    App methods are reached from the public methods of its public classes.
    A virtual call typed by a framework class sets the bit of every entry
    point it may dispatch to in that class's cone.
    """
    if app.uses_reflection:
        raise AppDiscarded(app.name, "reflection")
    if app.uses_dynamic_loading:
        raise AppDiscarded(app.name, "dynamic class loading")
    index = {e: i for i, e in enumerate(entry_order)}
    bits = np.zeros(len(entry_order), dtype=bool)
    ambiguous: Dict[str, List[str]] = {}
    fw_hier = Hierarchy(fw.classes)
    app_hier = Hierarchy(fw.classes, app.classes)

    seen: Set[MethodRef] = set()
    todo = sorted(_app_roots(app), key=str)
    seen.update(todo)
    while todo:
        ref = todo.pop()
        m = app.classes[ref.cls].methods[ref.sig]
        for i, stmt in enumerate(m.body):
            if not isinstance(stmt, (VirtualCall, StaticCall)):
                continue
            target = stmt.method
            if target.cls in app.classes:
                if isinstance(stmt, StaticCall):
                    hit = app_hier.lookup(target.cls, target.sig)
                    callees = [hit] if hit is not None else []
                else:
                    callees = app_hier.cha_targets(target)
                for c in callees:
                    if c.cls in app.classes and c not in seen:
                        seen.add(c)
                        todo.append(c)
                continue
            if target.cls not in fw.classes:
                continue
            if isinstance(stmt, StaticCall):
                hit = fw_hier.lookup(target.cls, target.sig)
                cands = {hit} if hit is not None else set()
            else:
                cands = set(fw_hier.cha_targets(target))
                hit = fw_hier.lookup(target.cls, target.sig)
                if hit is not None:
                    cands.add(hit)
            keys = sorted(str(c) for c in cands if str(c) in index)
            for k in keys:
                bits[index[k]] = True
                if len(keys) > 1:
                    ambiguous.setdefault(k, []).append(f"{ref}@{i}")
    return AccessVector(tuple(entry_order), bits, {k: tuple(sorted(v)) for k, v in sorted(ambiguous.items())})


def infer_permissions(av: AccessVector, m: AccessMatrix) -> Set[str]:
    """IP(j) = OR_i (AV(i) AND M(i, j))."""
    if tuple(av.entry_order) != tuple(m.entry_order) or av.bits.shape[0] != m.bits.shape[0]:
        raise ValueError(f"access vector over {len(av.entry_order)} entries does not match "
                         f"matrix with {m.bits.shape[0]} rows")
    ip = (av.bits[:, None] & m.bits).any(axis=0)
    return {p for p, b in zip(m.perm_order, ip) if b}


@dataclass(frozen=True)
class GapReport:
    app: str
    declared: FrozenSet[str]
    inferred: FrozenSet[str] = frozenset()
    gap: FrozenSet[str] = frozenset()
    missing: FrozenSet[str] = frozenset()
    witnesses: Mapping[str, str] = field(default_factory=dict)
    discarded: bool = False
    reason: str = ""
    ambiguous: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.discarded:
            return 2
        return 1 if self.gap else 0

    def to_json(self) -> dict:
        return {
            "app": self.app,
            "declared": sorted(self.declared),
            "inferred": sorted(self.inferred),
            "gap": sorted(self.gap),
            "missing": sorted(self.missing),
            "witnesses": dict(sorted(self.witnesses.items())),
            "discarded": self.discarded,
            "reason": self.reason,
            "ambiguous": {k: list(v) for k, v in sorted(self.ambiguous.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def gap(app: AppModel, ip: Set[str], av: Optional[AccessVector] = None,
        m: Optional[AccessMatrix] = None) -> GapReport:
    declared = frozenset(app.declared)
    inferred = frozenset(ip)
    witnesses: Dict[str, str] = {}
    if av is not None and m is not None:
        for j, p in enumerate(m.perm_order):
            if p not in inferred:
                continue
            for i, e in enumerate(m.entry_order):
                if av.bits[i] and m.bits[i, j]:
                    witnesses[p] = e
                    break
    ambiguous = dict(av.ambiguous) if av is not None else {}
    return GapReport(app.name, declared, inferred, declared - inferred, inferred - declared, witnesses,
                     ambiguous=ambiguous)


def analyze_app(app: AppModel, fw: FrameworkModel, pm: PermissionMap,
                m: Optional[AccessMatrix] = None) -> GapReport:
    """Full calculus for one app; discarded apps come back flagged, not raised."""
    m = m if m is not None else build_matrix(pm)
    try:
        av = extract_av(app, fw, m.entry_order)
    except AppDiscarded as exc:
        return GapReport(app.name, frozenset(app.declared), discarded=True, reason=exc.reason)
    touched = sorted(e for e in av.called() if e in m.timeouts)
    if touched:
        return GapReport(app.name, frozenset(app.declared), discarded=True,
                         reason="uses entry points whose analysis timed out: " + ", ".join(touched))
    return gap(app, infer_permissions(av, m), av, m)


@dataclass(frozen=True)
class MapDiff:
    classification: Mapping[str, str]
    a_sizes: Mapping[str, int]
    b_sizes: Mapping[str, int]
    only_a: Tuple[str, ...] = ()
    only_b: Tuple[str, ...] = ()
    inconclusive: Tuple[str, ...] = ()

    def counts(self) -> Dict[str, int]:
        out = {c: 0 for c in CLASSES}
        for c in self.classification.values():
            out[c] += 1
        return out

    def same_size(self) -> int:
        return sum(1 for e in self.classification if self.a_sizes[e] == self.b_sizes[e])

    def to_json(self) -> dict:
        return {
            "counts": self.counts(),
            "sameSize": self.same_size(),
            "entries": {e: {"class": c, "a": self.a_sizes[e], "b": self.b_sizes[e]}
                        for e, c in sorted(self.classification.items())},
            "onlyA": list(self.only_a),
            "onlyB": list(self.only_b),
            "inconclusive": list(self.inconclusive),
        }


def _classify(a: FrozenSet[str], b: FrozenSet[str]) -> str:
    if a == b:
        return IDENTICAL
    if a < b:
        return A_SMALLER
    if b < a:
        return B_SMALLER
    return INCOMPARABLE


def diff_maps(a: PermissionMap, b: PermissionMap) -> MapDiff:
    if a.hash != b.hash:
        raise MapMismatch(f"maps were built from different frameworks ({a.hash[:12]} vs {b.hash[:12]})")
    common = sorted(set(a.entries) & set(b.entries))
    cls, sa, sb, inconclusive = {}, {}, {}, []
    for e in common:
        pa, pb = a.permissions(e), b.permissions(e)
        if pa is None or pb is None:
            inconclusive.append(e)
            continue
        cls[e] = _classify(pa, pb)
        sa[e], sb[e] = len(pa), len(pb)
    return MapDiff(cls, sa, sb, tuple(sorted(set(a.entries) - set(b.entries))),
                   tuple(sorted(set(b.entries) - set(a.entries))), tuple(inconclusive))
