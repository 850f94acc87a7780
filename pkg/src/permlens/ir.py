"""Core data model for PBIR, the permission-based framework IR.

A framework is a set of classes whose methods hold straight-line statement
lists.  Permission enforcement points (PEPs) are calls whose method name is
one of the six context check methods; the checked permission is the string
passed as the first argument.
"""

from __future__ import annotations

import fnmatch
import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

PERMISSION_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")

STRING = "String"
STRING_ARRAY = "StringArray"
VOID = "void"
BUILTIN_TYPES = frozenset({STRING, STRING_ARRAY})

CONSTRUCTOR = "<init>"
SYNTHETIC_PREFIX = "$synthetic."

# name -> index of the permission-string parameter
PEP_SIGNATURES: Mapping[str, int] = {
    "checkPermission": 0,
    "checkCallingPermission": 0,
    "checkCallingOrSelfPermission": 0,
    "enforcePermission": 0,
    "enforceCallingPermission": 0,
    "enforceCallingOrSelfPermission": 0,
}

# Receiver classes accepted as contexts when PEP recognition is strict.
CONTEXT_CLASSES = frozenset({"Context", "ContextWrapper", "android.content.Context",
                             "android.content.ContextWrapper"})


def is_synthetic(class_name: str) -> bool:
    return class_name.startswith(SYNTHETIC_PREFIX)


@dataclass(frozen=True, order=True)
class MethodSig:
    name: str
    params: Tuple[str, ...] = ()
    ret: str = VOID

    def __str__(self) -> str:
        return f"{self.ret} {self.name}({','.join(self.params)})"


@dataclass(frozen=True)
class MethodRef:
    """A method identity: declaring (or referenced) class plus signature."""

    cls: str
    sig: MethodSig

    def __str__(self) -> str:
        return f"<{self.cls}: {self.sig}>"

    def __lt__(self, other: "MethodRef") -> bool:
        return str(self) < str(other)

    @property
    def name(self) -> str:
        return self.sig.name


@dataclass(frozen=True)
class Lit:
    """A string literal used directly as a call argument."""

    value: str


Operand = Union[str, Lit]


# --- statements -------------------------------------------------------------

@dataclass(frozen=True)
class Alloc:
    target: str
    cls: str


@dataclass(frozen=True)
class Copy:
    target: str
    source: str


@dataclass(frozen=True)
class FieldStore:
    base: str
    field: str
    source: str


@dataclass(frozen=True)
class FieldLoad:
    target: str
    base: str
    field: str


@dataclass(frozen=True)
class StaticStore:
    cls: str
    field: str
    source: str


@dataclass(frozen=True)
class StaticLoad:
    target: str
    cls: str
    field: str


@dataclass(frozen=True)
class StringConst:
    target: str
    value: str


@dataclass(frozen=True)
class StringArrayConst:
    target: str
    values: Tuple[str, ...]


@dataclass(frozen=True)
class VirtualCall:
    target: Optional[str]
    receiver: str
    method: MethodRef
    args: Tuple[Operand, ...] = ()


@dataclass(frozen=True)
class StaticCall:
    target: Optional[str]
    method: MethodRef
    args: Tuple[Operand, ...] = ()


@dataclass(frozen=True)
class GetService:
    target: str
    key: str


@dataclass(frozen=True)
class GetSystemService:
    target: str
    key: Operand


@dataclass(frozen=True)
class Transact:
    target: Optional[str]
    receiver: str
    args: Tuple[Operand, ...] = ()


@dataclass(frozen=True)
class ClearIdentity:
    pass


@dataclass(frozen=True)
class RestoreIdentity:
    pass


@dataclass(frozen=True)
class Return:
    source: Optional[str] = None


@dataclass(frozen=True)
class Opaque:
    """A value the analysis cannot see into (parcel read, URI, unknown input)."""

    target: str
    label: str = "unknown"


@dataclass(frozen=True)
class Marker:
    """Reflection (``reflect``) or dynamic class loading (``loadClass``)."""

    kind: str


Statement = Union[Alloc, Copy, FieldStore, FieldLoad, StaticStore, StaticLoad, StringConst,
                  StringArrayConst, VirtualCall, StaticCall, GetService, GetSystemService,
                  Transact, ClearIdentity, RestoreIdentity, Return, Opaque, Marker]

CALL_TYPES = (VirtualCall, StaticCall, Transact)
MARKER_KINDS = ("reflect", "loadClass")


def defined_var(stmt: Statement) -> Optional[str]:
    """The local a statement assigns, if any."""
    if isinstance(stmt, (Alloc, Copy, FieldLoad, StaticLoad, StringConst, StringArrayConst,
                         GetService, GetSystemService, Opaque)):
        return stmt.target
    if isinstance(stmt, (VirtualCall, StaticCall, Transact)):
        return stmt.target
    return None


def used_vars(stmt: Statement) -> List[str]:
    """Locals read by a statement, in operand order."""
    if isinstance(stmt, Copy):
        return [stmt.source]
    if isinstance(stmt, FieldStore):
        return [stmt.base, stmt.source]
    if isinstance(stmt, FieldLoad):
        return [stmt.base]
    if isinstance(stmt, StaticStore):
        return [stmt.source]
    if isinstance(stmt, VirtualCall):
        return [stmt.receiver] + [a for a in stmt.args if isinstance(a, str)]
    if isinstance(stmt, Transact):
        return [stmt.receiver] + [a for a in stmt.args if isinstance(a, str)]
    if isinstance(stmt, StaticCall):
        return [a for a in stmt.args if isinstance(a, str)]
    if isinstance(stmt, GetSystemService) and isinstance(stmt.key, str):
        return [stmt.key]
    if isinstance(stmt, Return) and stmt.source is not None:
        return [stmt.source]
    return []


def pep_param_index(stmt: Statement, strict: bool = False) -> Optional[int]:
    """Index of the permission argument if ``stmt`` is a PEP call, else None."""
    if not isinstance(stmt, (VirtualCall, StaticCall)):
        return None
    idx = PEP_SIGNATURES.get(stmt.method.name)
    if idx is None or idx >= len(stmt.args):
        return None
    if strict and stmt.method.cls not in CONTEXT_CLASSES:
        return None
    return idx


# --- declarations -------------------------------------------------------------

@dataclass(frozen=True)
class MethodDef:
    sig: MethodSig
    param_names: Tuple[str, ...] = ()
    public: bool = True
    static: bool = False
    abstract: bool = False
    body: Tuple[Statement, ...] = ()

    @property
    def is_constructor(self) -> bool:
        return self.sig.name == CONSTRUCTOR


@dataclass(frozen=True)
class ClassDef:
    name: str
    superclass: Optional[str] = None
    interfaces: Tuple[str, ...] = ()
    abstract: bool = False
    interface: bool = False
    public: bool = True
    fields: Mapping[str, str] = field(default_factory=dict)
    static_fields: Mapping[str, str] = field(default_factory=dict)
    methods: Mapping[MethodSig, MethodDef] = field(default_factory=dict)

    @property
    def is_abstract(self) -> bool:
        return self.abstract or self.interface

    def ref(self, sig: MethodSig) -> MethodRef:
        return MethodRef(self.name, sig)


@dataclass(frozen=True)
class FrameworkModel:
    name: str
    permissions: FrozenSet[str] = frozenset()
    classes: Mapping[str, ClassDef] = field(default_factory=dict)
    services: Mapping[str, str] = field(default_factory=dict)
    managers: Mapping[str, str] = field(default_factory=dict)
    proxies: Mapping[str, str] = field(default_factory=dict)

    def method(self, ref: MethodRef) -> Optional[MethodDef]:
        cls = self.classes.get(ref.cls)
        return None if cls is None else cls.methods.get(ref.sig)

    def iter_methods(self) -> Iterator[Tuple[MethodRef, MethodDef]]:
        for cname in sorted(self.classes):
            cls = self.classes[cname]
            for sig in sorted(cls.methods, key=str):
                yield MethodRef(cname, sig), cls.methods[sig]

    def is_permission(self, literal: str) -> bool:
        return bool(PERMISSION_RE.match(literal)) and literal in self.permissions

    def replace_classes(self, classes: Mapping[str, ClassDef]) -> "FrameworkModel":
        return FrameworkModel(self.name, self.permissions, dict(classes), dict(self.services),
                              dict(self.managers), dict(self.proxies))


@dataclass(frozen=True)
class AppModel:
    name: str
    declared: FrozenSet[str] = frozenset()
    classes: Mapping[str, ClassDef] = field(default_factory=dict)
    uses_reflection: bool = False
    uses_dynamic_loading: bool = False

    def iter_methods(self) -> Iterator[Tuple[MethodRef, MethodDef]]:
        for cname in sorted(self.classes):
            cls = self.classes[cname]
            for sig in sorted(cls.methods, key=str):
                yield MethodRef(cname, sig), cls.methods[sig]


# --- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    line: int = 0
    col: int = 0
    file: str = "<model>"

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}: {self.severity}: {self.message}"


class PBIRError(Exception):
    """Raised when a model fails to parse or validate."""

    def __init__(self, diagnostics: List[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# Position lookup keys used by the parser: class name, (class, sig) or (class, sig, index).
PosKey = Union[str, Tuple[str, MethodSig], Tuple[str, MethodSig, int]]


class _Sink:
    def __init__(self, positions: Optional[Mapping] = None, file: str = "<model>"):
        self.positions = positions or {}
        self.file = file
        self.items: List[Diagnostic] = []

    def add(self, severity: str, message: str, *keys) -> None:
        line = col = 0
        for key in keys:
            if key in self.positions:
                line, col = self.positions[key]
                break
        self.items.append(Diagnostic(severity, message, line, col, self.file))


def identity_regions(body: Iterable[Statement]) -> List[Tuple[int, int]]:
    """(clear, restore) index pairs; raises ValueError when unbalanced or nested."""
    regions = []
    open_at: Optional[int] = None
    for i, stmt in enumerate(body):
        if isinstance(stmt, ClearIdentity):
            if open_at is not None:
                raise ValueError(f"nested identity region at statement {i}")
            open_at = i
        elif isinstance(stmt, RestoreIdentity):
            if open_at is None:
                raise ValueError(f"unbalanced identity region: restore without clear at statement {i}")
            regions.append((open_at, i))
            open_at = None
    if open_at is not None:
        raise ValueError(f"unbalanced identity region: clear at statement {open_at} is never restored")
    return regions


def _check_body(sink: _Sink, cname: str, method: MethodDef) -> None:
    key = (cname, method.sig)
    if method.abstract and method.body:
        sink.add("error", f"abstract method {MethodRef(cname, method.sig)} has a body", key)
    try:
        identity_regions(method.body)
    except ValueError as exc:
        sink.add("error", str(exc), key)
    assigned = set(method.param_names)
    if not method.static:
        assigned.add("this")
    for i, stmt in enumerate(method.body):
        for var in used_vars(stmt):
            if var not in assigned:
                sink.add("error", f"local '{var}' used before assignment in {MethodRef(cname, method.sig)}",
                         (cname, method.sig, i), key)
        target = defined_var(stmt)
        if target is not None:
            assigned.add(target)


def _check_hierarchy(sink: _Sink, classes: Mapping[str, ClassDef], external: Mapping[str, ClassDef]) -> None:
    known = dict(external)
    known.update(classes)
    for cname, cls in classes.items():
        for parent in ([cls.superclass] if cls.superclass else []) + list(cls.interfaces):
            if parent not in known:
                sink.add("error", f"unresolved class reference '{parent}' in {cname}", cname)
        seen = {cname}
        cur = cls.superclass
        while cur is not None and cur in known:
            if cur in seen:
                sink.add("error", f"cyclic superclass chain through {cname}", cname)
                break
            seen.add(cur)
            cur = known[cur].superclass
        if not cls.is_abstract:
            for sig, m in cls.methods.items():
                if m.abstract:
                    sink.add("error", f"concrete class {cname} declares abstract method {sig}", (cname, sig))


def validate_framework(fw: FrameworkModel, positions: Optional[Mapping] = None,
                       file: str = "<model>") -> List[Diagnostic]:
    """All diagnostics for ``fw``; an empty error list means the model is valid."""
    sink = _Sink(positions, file)
    for p in fw.permissions:
        if not PERMISSION_RE.match(p):
            sink.add("error", f"invalid permission name '{p}'")
    _check_hierarchy(sink, fw.classes, {})
    for kind, registry in (("service", fw.services), ("manager", fw.managers)):
        for key, target in registry.items():
            if target not in fw.classes:
                sink.add("error", f"{kind} '{key}' targets unknown class '{target}'")
    for proxy, target in fw.proxies.items():
        for name in (proxy, target):
            if name not in fw.classes:
                sink.add("error", f"proxy declaration references unknown class '{name}'")
    for cname, cls in fw.classes.items():
        for sig, method in cls.methods.items():
            _check_body(sink, cname, method)
            for i, stmt in enumerate(method.body):
                pos = ((cname, sig, i), (cname, sig))
                if isinstance(stmt, (Alloc,)) and stmt.cls not in fw.classes:
                    sink.add("error", f"unresolved class reference '{stmt.cls}'", *pos)
                elif isinstance(stmt, (StaticLoad, StaticStore)) and stmt.cls not in fw.classes:
                    sink.add("error", f"unresolved class reference '{stmt.cls}'", *pos)
                elif isinstance(stmt, (VirtualCall, StaticCall)):
                    if stmt.method.cls not in fw.classes and stmt.method.name not in PEP_SIGNATURES:
                        sink.add("error", f"unresolved class reference '{stmt.method.cls}'", *pos)
                    idx = pep_param_index(stmt)
                    if idx is not None:
                        arg = stmt.args[idx]
                        if isinstance(arg, Lit) and PERMISSION_RE.match(arg.value) \
                                and arg.value not in fw.permissions:
                            sink.add("warning", f"permission '{arg.value}' checked but not declared", *pos)
                elif isinstance(stmt, Marker) and stmt.kind not in MARKER_KINDS:
                    sink.add("error", f"unknown marker '{stmt.kind}'", *pos)
    return sink.items


def validate_app(app: AppModel, positions: Optional[Mapping] = None, file: str = "<model>",
                 framework: Optional[FrameworkModel] = None) -> List[Diagnostic]:
    sink = _Sink(positions, file)
    for p in app.declared:
        if not PERMISSION_RE.match(p):
            sink.add("error", f"invalid permission name '{p}'")
        elif framework is not None and p not in framework.permissions:
            sink.add("error", f"declared permission '{p}' is not defined by framework '{framework.name}'")
    if framework is not None:
        _check_hierarchy(sink, app.classes, framework.classes)
    for cname, cls in app.classes.items():
        for method in cls.methods.values():
            _check_body(sink, cname, method)
    return sink.items


def errors(diags: Iterable[Diagnostic]) -> List[Diagnostic]:
    return [d for d in diags if d.severity == "error"]


# --- entry points -------------------------------------------------------------

def entry_points(fw: FrameworkModel, mode: str = "cha") -> List[MethodRef]:
    """Public, non-abstract methods (and constructors) of public classes.

    In ``pta`` mode instance methods of abstract classes are dropped because
    no receiver object of that class can be allocated.
    """
    if mode not in ("cha", "pta"):
        raise ValueError(f"unknown analysis mode {mode!r}")
    out = []
    for cname, cls in fw.classes.items():
        if not cls.public or is_synthetic(cname):
            continue
        for sig, m in cls.methods.items():
            if not m.public or m.abstract:
                continue
            if mode == "pta" and cls.is_abstract and not m.static:
                continue
            out.append(MethodRef(cname, sig))
    return sorted(out, key=str)


def match_classes(fw: FrameworkModel, patterns: Iterable[str]) -> Dict[str, List[str]]:
    """Class names matched by each glob pattern."""
    return {p: sorted(c for c in fw.classes if fnmatch.fnmatchcase(c, p)) for p in patterns}
