"""Permission-name extraction at enforcement points.

The argument of a PEP call is traced backwards inside the method through
copies to string constants or string-array constants.  When it bottoms out in
a method parameter, the search moves one frame down the call stack and
continues from the caller's argument at the call site.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .ir import (
    Copy, FrameworkModel, Lit, MethodDef, MethodRef, Operand, StaticCall, StringArrayConst,
    StringConst, Transact, VirtualCall, defined_var, is_synthetic, pep_param_index,
)

LITERAL = "literal"
FLOW = "flow"
ARRAY = "array"
DESCENT = "parameter-descent"
UNRESOLVED = "unresolved"
CATEGORIES = (LITERAL, FLOW, ARRAY, DESCENT, UNRESOLVED)

# reason prefix when the value is a parameter of an entry point called by a generated driver
ENTRY_PARAMETER = "value is a parameter of entry point"

Frame = Tuple[MethodRef, int]


class MalformedStack(ValueError):
    pass


@dataclass(frozen=True)
class PermissionResolution:
    pep_site: Frame
    pep: str
    permissions: FrozenSet[str]
    category: str
    descent_depth: int = 0
    reason: str = ""

    @property
    def resolved(self) -> bool:
        return bool(self.permissions)

    @property
    def status(self) -> str:
        return "resolved" if self.resolved else "unresolved"

    def to_json(self) -> dict:
        return {
            "site": f"{self.pep_site[0]}@{self.pep_site[1]}",
            "pep": self.pep,
            "status": self.status,
            "permissions": sorted(self.permissions),
            "category": self.category,
            "descentDepth": self.descent_depth,
            **({"reason": self.reason} if self.reason else {}),
        }


class _Unresolved(Exception):
    pass


@dataclass
class _Trace:
    array: bool = False
    steps: int = 0
    depth: int = 0


def _callee_matches(stmt, callee: MethodRef) -> bool:
    if isinstance(stmt, (VirtualCall, StaticCall)):
        return stmt.method.sig == callee.sig
    if isinstance(stmt, Transact):
        return callee.name == "onTransact"
    return False


def _method(model: FrameworkModel, ref: MethodRef) -> MethodDef:
    m = model.method(ref)
    if m is None:
        raise MalformedStack(f"unknown method {ref} in stack")
    return m


def check_stack(model: FrameworkModel, stack: Sequence[Frame]) -> None:
    if not stack:
        raise MalformedStack("empty call stack")
    for i, (ref, idx) in enumerate(stack):
        m = _method(model, ref)
        if not 0 <= idx < len(m.body):
            raise MalformedStack(f"frame {i}: statement index {idx} out of range for {ref}")
        if i + 1 < len(stack) and not _callee_matches(m.body[idx], stack[i + 1][0]):
            raise MalformedStack(f"frame {i}: statement {idx} of {ref} does not call {stack[i + 1][0]}")


class _Resolver:
    def __init__(self, model: FrameworkModel, stack: Sequence[Frame], max_descent: Optional[int]):
        self.model = model
        self.stack = stack
        self.max_descent = max_descent
        self.trace = _Trace()

    def operand(self, level: int, op: Operand, depth: int) -> Set[str]:
        if isinstance(op, Lit):
            return {op.value} if self.model.is_permission(op.value) else set()
        self.trace.steps += 1
        return self.var(level, op, depth, set())

    def var(self, level: int, name: str, depth: int, visited: Set[str]) -> Set[str]:
        if name in visited:
            return set()
        visited.add(name)
        ref, _ = self.stack[level]
        m = self.model.method(ref)
        if name == "this":
            raise _Unresolved("receiver object is not a string")
        found: Set[str] = set()
        defs = [s for s in m.body if defined_var(s) == name]
        for stmt in defs:
            if isinstance(stmt, StringConst):
                if self.model.is_permission(stmt.value):
                    found.add(stmt.value)
            elif isinstance(stmt, StringArrayConst):
                self.trace.array = True
                found.update(v for v in stmt.values if self.model.is_permission(v))
            elif isinstance(stmt, Copy):
                found |= self.var(level, stmt.source, depth, visited)
            else:
                raise _Unresolved(f"'{name}' comes from a non-constant source ({type(stmt).__name__})")
        if name in m.param_names:
            found |= self.descend(level, m.param_names.index(name), depth)
        elif not defs:
            raise _Unresolved(f"'{name}' is never assigned")
        return found

    def descend(self, level: int, param: int, depth: int) -> Set[str]:
        if level == 0:
            raise _Unresolved("value is a parameter of the outermost frame")
        if self.max_descent is not None and depth + 1 > self.max_descent:
            raise _Unresolved(f"descent bound {self.max_descent} reached")
        caller, idx = self.stack[level - 1]
        if is_synthetic(caller.cls):
            raise _Unresolved(f"{ENTRY_PARAMETER} {self.stack[level][0]}")
        call = self.model.method(caller).body[idx]
        if param >= len(call.args):
            raise _Unresolved("call site passes fewer arguments than the callee declares")
        self.trace.depth = max(self.trace.depth, depth + 1)
        return self.operand(level - 1, call.args[param], depth + 1)


def resolve_permission(model: FrameworkModel, stack: Sequence[Frame], arg_index: Optional[int] = None,
                       max_descent: Optional[int] = None) -> PermissionResolution:
    """Resolve the permission names checked at the PEP in the last stack frame.

    ``stack[i] = (method, index of the call into stack[i+1])``; the last frame
    points at the PEP call itself.  ``max_descent`` bounds how many caller
    frames may be consumed; hitting the bound yields an unresolved result,
    never a partial set.
    """
    check_stack(model, stack)
    ref, idx = stack[-1]
    stmt = model.method(ref).body[idx]
    if arg_index is None:
        arg_index = pep_param_index(stmt)
        if arg_index is None:
            raise MalformedStack(f"statement {idx} of {ref} is not a permission check")
    if not isinstance(stmt, (VirtualCall, StaticCall)) or arg_index >= len(stmt.args):
        raise MalformedStack(f"argument {arg_index} out of range at {ref}@{idx}")
    site = (ref, idx)
    resolver = _Resolver(model, stack, max_descent)
    arg = stmt.args[arg_index]
    try:
        perms = resolver.operand(len(stack) - 1, arg, 0)
    except _Unresolved as exc:
        return PermissionResolution(site, stmt.method.name, frozenset(), UNRESOLVED,
                                    resolver.trace.depth, str(exc))
    if not perms:
        return PermissionResolution(site, stmt.method.name, frozenset(), UNRESOLVED, resolver.trace.depth,
                                    "no permission-like constant reaches the check")
    tr = resolver.trace
    if tr.depth:
        category = DESCENT
    elif tr.array:
        category = ARRAY
    elif isinstance(arg, Lit):
        category = LITERAL
    else:
        category = FLOW
    return PermissionResolution(site, stmt.method.name, frozenset(perms), category, tr.depth)


def local_string_values(method: MethodDef, var: str) -> Optional[Set[str]]:
    """All string constants ``var`` may hold inside ``method``; None if any source is non-constant."""
    out: Set[str] = set()
    seen: Set[str] = set()
    todo = [var]
    while todo:
        name = todo.pop()
        if name in seen:
            continue
        seen.add(name)
        if name in method.param_names or name == "this":
            return None
        defs = [s for s in method.body if defined_var(s) == name]
        if not defs:
            return None
        for stmt in defs:
            if isinstance(stmt, StringConst):
                out.add(stmt.value)
            elif isinstance(stmt, Copy):
                todo.append(stmt.source)
            else:
                return None
    return out


@dataclass
class ResolutionHistogram:
    total: int = 0
    by_category: Dict[str, int] = field(default_factory=lambda: {c: 0 for c in CATEGORIES})
    by_count: Dict[str, int] = field(default_factory=lambda: {"1": 0, "2": 0, ">2": 0})

    @property
    def found(self) -> int:
        return self.total - self.by_category[UNRESOLVED]

    def to_json(self) -> dict:
        return {"total": self.total, "found": self.found, "notFound": self.by_category[UNRESOLVED],
                "byCategory": dict(self.by_category), "byCount": dict(self.by_count)}

    def rows(self) -> List[Tuple[str, int]]:
        """Rows shaped like a string-resolution summary table."""
        return [
            ("total analyses", self.total),
            ("string found", self.found),
            ("with 1 permission", self.by_count["1"]),
            ("with 2 permissions", self.by_count["2"]),
            ("with >2 permissions", self.by_count[">2"]),
            ("with only direct strings", self.by_category[LITERAL]),
            ("with flow analysis", self.by_category[FLOW]),
            ("with strings in array", self.by_category[ARRAY]),
            ("with parameter descent", self.by_category[DESCENT]),
            ("string not found", self.by_category[UNRESOLVED]),
        ]


def classify_resolutions(rs: Sequence[PermissionResolution]) -> ResolutionHistogram:
    hist = ResolutionHistogram()
    cats = Counter(r.category for r in rs)
    hist.total = len(rs)
    for c in CATEGORIES:
        hist.by_category[c] = cats.get(c, 0)
    for r in rs:
        if r.resolved:
            n = len(r.permissions)
            hist.by_count["1" if n == 1 else "2" if n == 2 else ">2"] += 1
    return hist
