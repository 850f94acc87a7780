"""Subtype relation and method lookup over one or more class tables."""

from __future__ import annotations

from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Optional, Set

from .ir import CONSTRUCTOR, STRING, STRING_ARRAY, ClassDef, MethodDef, MethodRef, MethodSig


class Hierarchy:
    def __init__(self, *tables: Mapping[str, ClassDef]):
        self.classes: Dict[str, ClassDef] = {}
        for table in tables:
            self.classes.update(table)
        direct: Dict[str, Set[str]] = defaultdict(set)
        for name, cls in self.classes.items():
            for parent in ([cls.superclass] if cls.superclass else []) + list(cls.interfaces):
                direct[parent].add(name)
        self._direct_subs = direct
        self._cone_cache: Dict[str, frozenset] = {}
        self._lookup_cache: Dict = {}

    def __contains__(self, name: str) -> bool:
        return name in self.classes

    def cone(self, name: str) -> frozenset:
        """``name`` and all its transitive subtypes (classes and interfaces)."""
        hit = self._cone_cache.get(name)
        if hit is not None:
            return hit
        seen = {name}
        todo = [name]
        while todo:
            for sub in self._direct_subs.get(todo.pop(), ()):
                if sub not in seen:
                    seen.add(sub)
                    todo.append(sub)
        result = frozenset(seen)
        self._cone_cache[name] = result
        return result

    def supertypes(self, name: str) -> Set[str]:
        seen = set()
        todo = [name]
        while todo:
            cur = todo.pop()
            if cur in seen:
                continue
            seen.add(cur)
            cls = self.classes.get(cur)
            if cls is not None:
                todo.extend(([cls.superclass] if cls.superclass else []) + list(cls.interfaces))
        return seen

    def is_subtype(self, sub: str, sup: str) -> bool:
        return sup in self.supertypes(sub)

    def lookup(self, cls_name: str, sig: MethodSig) -> Optional[MethodRef]:
        """Single-dispatch lookup: walk the superclass chain for a concrete ``sig``."""
        key = (cls_name, sig)
        if key in self._lookup_cache:
            return self._lookup_cache[key]
        found = None
        cur: Optional[str] = cls_name
        seen = set()
        while cur is not None and cur in self.classes and cur not in seen:
            seen.add(cur)
            cls = self.classes[cur]
            m = cls.methods.get(sig)
            if m is not None and not m.abstract:
                found = MethodRef(cur, sig)
                break
            if sig.name == CONSTRUCTOR:
                break
            cur = cls.superclass
        self._lookup_cache[key] = found
        return found

    def lookup_by_name(self, cls_name: str, name: str) -> List[MethodRef]:
        """Concrete methods called ``name`` visible from ``cls_name`` (nearest declaration wins per signature)."""
        out: Dict[MethodSig, MethodRef] = {}
        cur: Optional[str] = cls_name
        seen = set()
        while cur is not None and cur in self.classes and cur not in seen:
            seen.add(cur)
            for sig, m in self.classes[cur].methods.items():
                if sig.name == name and not m.abstract and sig not in out:
                    out[sig] = MethodRef(cur, sig)
            cur = self.classes[cur].superclass
        return sorted(out.values(), key=str)

    def cha_targets(self, ref: MethodRef) -> List[MethodRef]:
        """Every concrete implementation of ``ref.sig`` reachable from the cone of ``ref.cls``."""
        if ref.name == CONSTRUCTOR:
            exact = self.classes.get(ref.cls)
            m = exact.methods.get(ref.sig) if exact else None
            return [ref] if m is not None and not m.abstract else []
        targets = set()
        for sub in self.cone(ref.cls):
            hit = self.lookup(sub, ref.sig)
            if hit is not None:
                targets.add(hit)
        return sorted(targets, key=str)

    def method(self, ref: MethodRef) -> Optional[MethodDef]:
        cls = self.classes.get(ref.cls)
        return None if cls is None else cls.methods.get(ref.sig)

    def concrete_subtypes(self, name: str) -> List[str]:
        return sorted(c for c in self.cone(name) if c in self.classes and not self.classes[c].is_abstract)

    def compatible(self, obj_type: str, declared: Optional[str]) -> bool:
        """Whether an object of ``obj_type`` may flow into a slot declared ``declared``.

        Slots typed by unknown names (primitives, Object) accept anything.
        """
        if declared is None or declared not in self.classes and declared not in (STRING, STRING_ARRAY):
            return True
        if declared in (STRING, STRING_ARRAY):
            return obj_type in (declared, "?")
        if obj_type not in self.classes:
            return False
        return self.is_subtype(obj_type, declared)


def all_method_names(classes: Iterable[ClassDef]) -> Set[str]:
    return {sig.name for c in classes for sig in c.methods}
