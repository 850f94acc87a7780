"""Model transformations applied before call-graph construction.

Order used by the pipeline: service redirection, identity-region marking,
method emptying, service initialization, manager initialization, then entry
driver generation and the synthetic main.  Every transformation returns a new
:class:`RewrittenFramework`; the input model is never mutated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

from .hierarchy import Hierarchy
from .ir import (
    CONSTRUCTOR, SYNTHETIC_PREFIX, Alloc, ClassDef, Copy, Diagnostic, FieldStore, FrameworkModel,
    GetService, GetSystemService, Lit, MethodDef, MethodRef, MethodSig, Opaque, PBIRError, Return,
    Statement, StaticCall, StaticLoad, StaticStore, Transact, VirtualCall, entry_points, errors,
    identity_regions, match_classes, validate_framework,
)
from .strings import local_string_values

MAIN_CLASS = SYNTHETIC_PREFIX + "Main"
SERVICES_CLASS = SYNTHETIC_PREFIX + "Services"
MANAGERS_CLASS = SYNTHETIC_PREFIX + "Managers"
DRIVER_PREFIX = SYNTHETIC_PREFIX + "driver."
GEN_PREFIX = SYNTHETIC_PREFIX + "gen."
MAIN_REF = MethodRef(MAIN_CLASS, MethodSig("main"))

Region = Tuple[int, int]
Site = Tuple[MethodRef, int]


@dataclass(frozen=True)
class RewrittenFramework:
    base: FrameworkModel
    model: FrameworkModel
    mode: Optional[str] = None
    drivers: Mapping[str, MethodRef] = field(default_factory=dict)
    generators: Mapping[str, MethodRef] = field(default_factory=dict)
    redirections: Mapping[Tuple[str, MethodSig], MethodRef] = field(default_factory=dict)
    redirected_sites: FrozenSet[Site] = frozenset()
    identity_enabled: bool = False
    identity_regions: Mapping[MethodRef, Tuple[Region, ...]] = field(default_factory=dict)
    emptied_methods: FrozenSet[MethodRef] = frozenset()
    service_singletons: Mapping[str, Tuple[str, str]] = field(default_factory=dict)
    service_inits: Mapping[str, MethodRef] = field(default_factory=dict)
    manager_factories: Mapping[str, MethodRef] = field(default_factory=dict)
    diagnostics: Tuple[Diagnostic, ...] = ()
    unsound: Tuple[Mapping[str, str], ...] = ()
    rewrites: Tuple[str, ...] = ()

    @property
    def synthetic_main(self) -> MethodRef:
        return MAIN_REF

    @property
    def main_method(self) -> Optional[MethodDef]:
        return self.model.method(MAIN_REF)

    def in_region(self, method: MethodRef, index: int) -> bool:
        return any(lo < index < hi for lo, hi in self.identity_regions.get(method, ()))


FrameworkLike = Union[FrameworkModel, RewrittenFramework]


def lift(fw: FrameworkLike) -> RewrittenFramework:
    if isinstance(fw, RewrittenFramework):
        return fw
    return _finish(RewrittenFramework(base=fw, model=fw), None)


def _set_class(classes: Dict[str, ClassDef], cls: ClassDef) -> None:
    classes[cls.name] = cls


def _main_body(rf: RewrittenFramework) -> Tuple[Statement, ...]:
    body: List[Statement] = [StaticCall(None, rf.service_inits[k]) for k in sorted(rf.service_inits)]
    body += [StaticCall(None, rf.drivers[c]) for c in sorted(rf.drivers)]
    body.append(Return())
    return tuple(body)


def _finish(rf: RewrittenFramework, step: Optional[str], **changes) -> RewrittenFramework:
    """Rebuild the synthetic main, refresh identity regions, validate."""
    rf = replace(rf, **changes)
    classes = dict(rf.model.classes)
    main = MethodDef(MAIN_REF.sig, (), True, True, False, _main_body(rf))
    _set_class(classes, ClassDef(MAIN_CLASS, public=False, methods={MAIN_REF.sig: main}))
    model = rf.model.replace_classes(classes)
    regions: Dict[MethodRef, Tuple[Region, ...]] = {}
    if rf.identity_enabled:
        for ref, m in model.iter_methods():
            found = identity_regions(m.body)
            if found:
                regions[ref] = tuple(found)
    rewrites = rf.rewrites + ((step,) if step else ())
    rf = replace(rf, model=model, identity_regions=regions, rewrites=rewrites)
    errs = errors(validate_framework(model))
    if errs:
        raise PBIRError(errs)
    return rf


def _map_bodies(model: FrameworkModel, fn) -> Dict[str, ClassDef]:
    """Apply ``fn(ref, method) -> body or None`` to every concrete method."""
    classes = {}
    for cname, cls in model.classes.items():
        methods = {}
        changed = False
        for sig, m in cls.methods.items():
            new_body = None if m.abstract else fn(MethodRef(cname, sig), m)
            if new_body is not None and tuple(new_body) != m.body:
                methods[sig] = replace(m, body=tuple(new_body))
                changed = True
            else:
                methods[sig] = m
        classes[cname] = replace(cls, methods=methods) if changed else cls
    return classes


# --- service redirection --------------------------------------------------------

def _service_key_for(model: FrameworkModel, service_cls: str) -> Optional[str]:
    keys = sorted(k for k, v in model.services.items() if v == service_cls)
    return keys[0] if keys else None


def redirect_services(fw: FrameworkLike) -> RewrittenFramework:
    """Short-circuit proxy calls to the service method they front.

    A call ``virtualinvoke r <Proxy: s>(args)`` becomes a fetch of the service
    object followed by ``virtualinvoke tmp <Service: s>(args)``.  Transact
    statements inside proxy methods are dropped.
    """
    rf = lift(fw)
    model = rf.model
    hier = Hierarchy(model.classes)
    diags = list(rf.diagnostics)
    redirections: Dict[Tuple[str, MethodSig], MethodRef] = dict(rf.redirections)
    for proxy in sorted(model.proxies):
        service = model.proxies[proxy]
        for sig in sorted(model.classes[proxy].methods, key=str):
            if sig.name == CONSTRUCTOR:
                continue
            if hier.lookup(service, sig) is None:
                diags.append(Diagnostic("warning", f"unmatched proxy method {MethodRef(proxy, sig)}"))
                continue
            redirections[(proxy, sig)] = MethodRef(service, sig)

    sites = set(rf.redirected_sites)

    def rewrite(ref: MethodRef, m: MethodDef):
        out: List[Statement] = []
        counter = 0
        new_sites = []
        for stmt in m.body:
            if isinstance(stmt, Transact) and ref.cls in model.proxies:
                if stmt.target is not None:
                    out.append(Opaque(stmt.target, "transact"))
                continue
            if isinstance(stmt, VirtualCall) and (stmt.method.cls, stmt.method.sig) in redirections:
                target = redirections[(stmt.method.cls, stmt.method.sig)]
                tmp = f"$svc{counter}"
                counter += 1
                key = _service_key_for(model, target.cls)
                out.append(GetService(tmp, key) if key is not None else Alloc(tmp, target.cls))
                new_sites.append(len(out))
                out.append(VirtualCall(stmt.target, tmp, target, stmt.args))
                continue
            out.append(stmt)
        if new_sites:
            # earlier recorded sites in this method shift; re-record from scratch
            for s in [s for s in sites if s[0] == ref]:
                sites.discard(s)
            sites.update((ref, i) for i in new_sites)
        return out

    classes = _map_bodies(model, rewrite)
    return _finish(rf, "redirect", model=model.replace_classes(classes), redirections=redirections,
                   redirected_sites=frozenset(sites), diagnostics=tuple(diags))


# --- identity regions -------------------------------------------------------------

def mark_identity_regions(fw: FrameworkLike) -> RewrittenFramework:
    """Record (clear, restore) statement intervals; statements strictly inside are in the region."""
    return _finish(lift(fw), "identity", identity_enabled=True)


# --- method emptying ----------------------------------------------------------------

def empty_methods(fw: FrameworkLike, patterns: Sequence[str]) -> RewrittenFramework:
    rf = lift(fw)
    if not patterns:
        return rf
    diags = list(rf.diagnostics)
    matched = match_classes(rf.model, patterns)
    targets = set()
    for pattern in patterns:
        if not matched[pattern]:
            diags.append(Diagnostic("warning", f"empty pattern '{pattern}' matches no class"))
        targets.update(matched[pattern])
    emptied = set(rf.emptied_methods)

    def rewrite(ref: MethodRef, m: MethodDef):
        if ref.cls not in targets:
            return None
        emptied.add(ref)
        return (Return(),)

    classes = _map_bodies(rf.model, rewrite)
    sites = frozenset(s for s in rf.redirected_sites if s[0].cls not in targets)
    return _finish(rf, "empty:" + ",".join(patterns), model=rf.model.replace_classes(classes),
                   emptied_methods=frozenset(emptied), redirected_sites=sites, diagnostics=tuple(diags))


# --- service / manager initialization ------------------------------------------------

def _field_names(keys) -> Dict[str, str]:
    names: Dict[str, str] = {}
    used = set()
    for key in sorted(keys):
        base = re.sub(r"\W", "_", key) or "svc"
        if base[0].isdigit():
            base = "_" + base
        name, n = base, 2
        while name in used:
            name, n = f"{base}_{n}", n + 1
        used.add(name)
        names[key] = name
    return names


def _noarg_ctor(model: FrameworkModel, cls: str) -> Optional[MethodRef]:
    sig = MethodSig(CONSTRUCTOR)
    c = model.classes.get(cls)
    return MethodRef(cls, sig) if c is not None and sig in c.methods else None


def initialize_services(fw: FrameworkLike) -> RewrittenFramework:
    """One static singleton plus init method per concrete service; ``getService`` reads the singleton."""
    rf = lift(fw)
    model = rf.model
    diags = list(rf.diagnostics)
    unsound = list(rf.unsound)
    concrete = {}
    for key in sorted(model.services):
        cls = model.services[key]
        if model.classes[cls].is_abstract:
            diags.append(Diagnostic("warning", f"service '{key}' targets abstract class {cls}; not initialized"))
            continue
        concrete[key] = cls
    fnames = _field_names(concrete)
    static_fields = {}
    methods = {}
    inits: Dict[str, MethodRef] = {}
    singletons: Dict[str, Tuple[str, str]] = {}
    for key, cls in concrete.items():
        fname = fnames[key]
        static_fields[fname] = cls
        body: List[Statement] = [Alloc("s", cls)]
        ctor = _noarg_ctor(model, cls)
        if ctor is not None:
            body.append(VirtualCall(None, "s", ctor))
        body += [StaticStore(SERVICES_CLASS, fname, "s"), Return()]
        sig = MethodSig("init_" + fname)
        methods[sig] = MethodDef(sig, (), True, True, False, tuple(body))
        inits[key] = MethodRef(SERVICES_CLASS, sig)
        singletons[key] = (SERVICES_CLASS, fname)

    def rewrite(ref: MethodRef, m: MethodDef):
        out = []
        for i, stmt in enumerate(m.body):
            if isinstance(stmt, GetService):
                if stmt.key in singletons:
                    out.append(StaticLoad(stmt.target, *singletons[stmt.key]))
                    continue
                diags.append(Diagnostic("warning", f"unknown service key '{stmt.key}' in {ref}"))
                unsound.append({"kind": "unknown-service-key", "site": f"{ref}@{i}", "detail": stmt.key})
            out.append(stmt)
        return out

    classes = _map_bodies(model, rewrite)
    classes[SERVICES_CLASS] = ClassDef(SERVICES_CLASS, public=False, static_fields=static_fields,
                                       methods=methods)
    return _finish(rf, "service-init", model=model.replace_classes(classes), service_inits=inits,
                   service_singletons=singletons, diagnostics=tuple(diags), unsound=tuple(unsound))


def _all_fields(model: FrameworkModel, cls: str) -> Dict[str, str]:
    fields: Dict[str, str] = {}
    chain = []
    cur: Optional[str] = cls
    while cur is not None and cur in model.classes and cur not in chain:
        chain.append(cur)
        cur = model.classes[cur].superclass
    for c in reversed(chain):
        fields.update(model.classes[c].fields)
    return fields


def initialize_managers(fw: FrameworkLike) -> RewrittenFramework:
    """Route ``getSystemService(key)`` to a synthetic factory that builds a wired manager."""
    rf = lift(fw)
    model = rf.model
    hier = Hierarchy(model.classes)
    diags = list(rf.diagnostics)
    unsound = list(rf.unsound)
    fnames = _field_names(model.managers)
    methods = {}
    factories: Dict[str, MethodRef] = {}
    for key in sorted(model.managers):
        mgr = model.managers[key]
        body: List[Statement] = [Alloc("m", mgr)]
        service = model.services.get(key)
        if service is not None:
            if key in rf.service_singletons:
                body.append(StaticLoad("s", *rf.service_singletons[key]))
            else:
                body.append(GetService("s", key))
            for fname, ftype in sorted(_all_fields(model, mgr).items()):
                if hier.is_subtype(service, ftype):
                    body.append(FieldStore("m", fname, "s"))
        body.append(Return("m"))
        sig = MethodSig("create_" + fnames[key], (), mgr)
        methods[sig] = MethodDef(sig, (), True, True, False, tuple(body))
        factories[key] = MethodRef(MANAGERS_CLASS, sig)

    def rewrite(ref: MethodRef, m: MethodDef):
        out = []
        for i, stmt in enumerate(m.body):
            if isinstance(stmt, GetSystemService):
                if isinstance(stmt.key, Lit):
                    values = {stmt.key.value}
                else:
                    values = local_string_values(m, stmt.key)
                site = f"{ref}@{i}"
                if values is None or len(values) != 1:
                    diags.append(Diagnostic("warning", f"dynamic system-service key at {site}"))
                    unsound.append({"kind": "dynamic-system-service-key", "site": site, "detail": ""})
                else:
                    (key,) = values
                    if key in factories:
                        out.append(StaticCall(stmt.target, factories[key]))
                        continue
                    diags.append(Diagnostic("warning", f"unknown system-service key '{key}' at {site}"))
                    unsound.append({"kind": "unknown-system-service-key", "site": site, "detail": key})
            out.append(stmt)
        return out

    classes = _map_bodies(model, rewrite)
    if methods:
        classes[MANAGERS_CLASS] = ClassDef(MANAGERS_CLASS, public=False, methods=methods)
    return _finish(rf, "manager-init", model=model.replace_classes(classes), manager_factories=factories,
                   diagnostics=tuple(diags), unsound=tuple(unsound))


# --- entry drivers --------------------------------------------------------------------

def generate_entry_drivers(fw: FrameworkLike, mode: str = "cha") -> RewrittenFramework:
    """One driver per public class calling each of its entry points, plus the synthetic main.

    In ``pta`` mode class-typed parameters are filled by a generator that
    allocates every concrete subtype; everything else gets an opaque value.
    """
    rf = lift(fw)
    model = rf.model
    hier = Hierarchy(model.classes)
    diags = list(rf.diagnostics)
    by_class: Dict[str, List[MethodRef]] = {}
    for ref in entry_points(model, mode):
        by_class.setdefault(ref.cls, []).append(ref)
    factory_for = {}
    for key, ref in rf.manager_factories.items():
        factory_for.setdefault(model.managers[key], ref)

    classes = dict(model.classes)
    generators: Dict[str, MethodRef] = dict(rf.generators)
    drivers: Dict[str, MethodRef] = {}

    def generator(ptype: str) -> Optional[MethodRef]:
        if ptype in generators:
            return generators[ptype]
        subs = hier.concrete_subtypes(ptype)
        if not subs:
            return None
        body: List[Statement] = []
        for n, sub in enumerate(subs):
            body += [Alloc(f"x{n}", sub), Copy("r", f"x{n}")]
        body.append(Return("r"))
        sig = MethodSig("generate", (), ptype)
        cname = GEN_PREFIX + ptype
        classes[cname] = ClassDef(cname, public=False, methods={sig: MethodDef(sig, (), True, True, False,
                                                                                tuple(body))})
        generators[ptype] = MethodRef(cname, sig)
        return generators[ptype]

    for cname in sorted(by_class):
        refs = by_class[cname]
        body: List[Statement] = []
        needs_receiver = any(not model.classes[cname].methods[r.sig].static for r in refs)
        if needs_receiver:
            if mode == "pta" and cname in factory_for:
                body.append(StaticCall("o", factory_for[cname]))
            else:
                body.append(Alloc("o", cname))
        for j, ref in enumerate(refs):
            m = model.classes[cname].methods[ref.sig]
            args = []
            for k, ptype in enumerate(ref.sig.params):
                local = f"a{j}_{k}"
                gen = generator(ptype) if mode == "pta" and ptype in hier else None
                if gen is not None:
                    body.append(StaticCall(local, gen))
                else:
                    if mode == "pta" and ptype in hier:
                        diags.append(Diagnostic("warning", f"no concrete subtype of {ptype} for parameter "
                                                           f"{k} of {ref}; passing an opaque value"))
                    body.append(Opaque(local, "entry-parameter"))
                args.append(local)
            if m.static:
                body.append(StaticCall(None, ref, tuple(args)))
            else:
                body.append(VirtualCall(None, "o", ref, tuple(args)))
        body.append(Return())
        dname = DRIVER_PREFIX + cname
        sig = MethodSig("drive")
        classes[dname] = ClassDef(dname, public=False,
                                  methods={sig: MethodDef(sig, (), True, True, False, tuple(body))})
        drivers[cname] = MethodRef(dname, sig)

    return _finish(rf, f"drivers:{mode}", model=model.replace_classes(classes), mode=mode,
                   drivers=drivers, generators=generators, diagnostics=tuple(diags))
