"""Seeded random frameworks and apps for property tests and oracle runs.

Every framework carries a small fixed block (class ``gen.Coverage``) that
exercises each way of naming a permission and a two-method call cycle, so
any corpus covers all resolution categories and contains at least one
non-trivial strongly connected component.  Methods whose string parameter
reaches a check are private helpers with exactly one call site, which
keeps resolution independent of the DFS path that first reaches them.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .hierarchy import Hierarchy
from .ir import (
    STRING, Alloc, AppModel, ClassDef, ClearIdentity, Copy, FieldLoad, FieldStore, FrameworkModel, Lit,
    Marker, MethodDef, MethodRef, MethodSig, Opaque, PBIRError, RestoreIdentity, Return, Statement,
    StaticCall, StringArrayConst, StringConst, Transact, VirtualCall, GetService, GetSystemService,
    entry_points, errors, validate_app, validate_framework,
)

PEPS = ("checkPermission", "checkCallingPermission", "checkCallingOrSelfPermission",
        "enforcePermission", "enforceCallingPermission", "enforceCallingOrSelfPermission")
CONTEXT = "android.content.Context"
SEED_ENV = "PERMLENS_SEED"


def default_seed(fallback: int = 0) -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else fallback


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    count: int = 10
    classes: Tuple[int, int] = (3, 7)
    methods_per_class: Tuple[int, int] = (2, 5)
    call_density: float = 0.35
    permissions: int = 6
    pep_density: float = 0.3
    cycle_prob: float = 0.2
    services: int = 1
    proxies: int = 1
    apps: int = 3
    identity_prob: float = 0.1
    reflection_prob: float = 0.1

    def validate(self) -> None:
        for name in ("classes", "methods_per_class"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} range {lo}..{hi} is empty")
        for name in ("call_density", "pep_density", "cycle_prob", "identity_prob", "reflection_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not in [0, 1]")
        for name in ("count", "permissions", "services", "proxies", "apps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.proxies > self.services:
            raise ValueError("every proxy needs a service: proxies must not exceed services")


@dataclass(frozen=True)
class CorpusItem:
    framework: FrameworkModel
    apps: Tuple[AppModel, ...] = ()


def _pep(name: str, arg, static: bool = False) -> Statement:
    ref = MethodRef(CONTEXT, MethodSig(name, (STRING,)))
    return StaticCall(None, ref, (arg,)) if static else VirtualCall(None, "this", ref, (arg,))


class _Builder:
    def __init__(self, spec: CorpusSpec, rng: random.Random, index: int):
        self.spec = spec
        self.rng = rng
        self.name = f"gen{index}"
        self.perms = [f"P{k}" for k in range(spec.permissions)]
        self.classes: Dict[str, dict] = {}
        self.services: Dict[str, str] = {}
        self.managers: Dict[str, str] = {}
        self.proxies: Dict[str, str] = {}
        self.tmp = 0

    def local(self, prefix: str = "t") -> str:
        self.tmp += 1
        return f"{prefix}{self.tmp}"

    def new_class(self, name: str, **kw) -> dict:
        c = {"name": name, "superclass": None, "interfaces": (), "abstract": False, "public": True,
             "fields": {}, "methods": {}}
        c.update(kw)
        self.classes[name] = c
        return c

    def add_method(self, cls: str, sig: MethodSig, body: List[Statement], public: bool = True,
                   static: bool = False, params: Tuple[str, ...] = (), abstract: bool = False) -> MethodRef:
        if not abstract and not (body and isinstance(body[-1], Return)):
            body = list(body) + [Return()]
        self.classes[cls]["methods"][sig] = MethodDef(sig, params, public, static, abstract,
                                                     () if abstract else tuple(body))
        return MethodRef(cls, sig)

    # -- permission checks

    def pep_statements(self, category: str, static: bool = False) -> List[Statement]:
        rng = self.rng
        pep_name = rng.choice(PEPS)
        if category == "literal":
            return [_pep(pep_name, Lit(rng.choice(self.perms)), static)]
        if category == "flow":
            a, b = self.local("s"), self.local("s")
            return [StringConst(a, rng.choice(self.perms)), Copy(b, a), _pep(pep_name, b, static)]
        if category == "array":
            a = self.local("arr")
            values = tuple(rng.sample(self.perms, min(len(self.perms), rng.randint(1, 3))))
            return [StringArrayConst(a, values), _pep(pep_name, a, static)]
        a = self.local("u")
        return [Opaque(a, rng.choice(("parcel", "uri"))), _pep(pep_name, a, static)]

    def descent_chain(self, cls: str, depth: int) -> List[Statement]:
        """Statements that pass a permission literal down ``depth`` private static helpers."""
        uid = self.local("h")
        prev_sig = None
        for level in range(depth, 0, -1):
            sig = MethodSig(f"{uid}_{level}", (STRING,))
            if prev_sig is None:
                body = [_pep(self.rng.choice(PEPS), "p", static=True)]
            else:
                body = [StaticCall(None, MethodRef(cls, prev_sig), ("p",))]
            self.add_method(cls, sig, body, public=False, static=True, params=("p",))
            prev_sig = sig
        v = self.local("s")
        return [StringConst(v, self.rng.choice(self.perms)), StaticCall(None, MethodRef(cls, prev_sig), (v,))]


def _freeze(b: _Builder) -> FrameworkModel:
    classes = {}
    for name, c in b.classes.items():
        classes[name] = ClassDef(name, c["superclass"], tuple(c["interfaces"]), c["abstract"],
                                 c.get("interface", False), c["public"], dict(c["fields"]),
                                 {}, dict(c["methods"]))
    return FrameworkModel(b.name, frozenset(b.perms), classes, dict(b.services), dict(b.managers),
                          dict(b.proxies))


def _coverage(b: _Builder) -> None:
    cls = "gen.Coverage"
    b.new_class(cls)
    with_peps = b.spec.pep_density > 0 and b.perms
    if with_peps:
        for cat in ("literal", "flow", "array", "unresolved"):
            b.add_method(cls, MethodSig("cover_" + cat), b.pep_statements(cat))
        b.add_method(cls, MethodSig("cover_descent"), b.descent_chain(cls, 2))
    # a two-method cycle reachable from an entry point
    ping, pong = MethodSig("ping"), MethodSig("pong")
    b.add_method(cls, MethodSig("cycle"), [VirtualCall(None, "this", MethodRef(cls, ping))])
    b.add_method(cls, ping, [VirtualCall(None, "this", MethodRef(cls, pong))], public=False)
    pong_body: List[Statement] = [VirtualCall(None, "this", MethodRef(cls, ping))]
    if with_peps:
        pong_body += b.pep_statements("literal")
    b.add_method(cls, pong, pong_body, public=False)


def _services(b: _Builder) -> List[Tuple[str, List[MethodSig]]]:
    """Service, stub, optional proxy and manager per service; returns API-facing call targets."""
    rng = b.rng
    api: List[Tuple[str, List[MethodSig]]] = []
    for k in range(b.spec.services):
        stub, svc, proxy, mgr = f"gen.svc.Svc{k}Stub", f"gen.svc.Svc{k}", f"gen.svc.Svc{k}Proxy", f"gen.Mgr{k}"
        sigs = [MethodSig(f"s{j}") for j in range(rng.randint(1, 3))]
        b.new_class(stub, abstract=True, public=False)
        for sig in sigs:
            b.add_method(stub, sig, [], abstract=True)
        b.add_method(stub, MethodSig("onTransact", ("int",)),
                     [VirtualCall(None, "this", MethodRef(stub, s)) for s in sigs], params=("code",))
        b.new_class(svc, superclass=stub, public=False)
        for sig in sigs:
            body = b.pep_statements("literal") if b.perms and rng.random() < max(b.spec.pep_density, 0.5) \
                and b.spec.pep_density > 0 else []
            b.add_method(svc, sig, body)
        key = f"svc{k}"
        b.services[key] = svc
        calls: List[Statement] = []
        if k < b.spec.proxies:
            b.new_class(proxy, public=False, fields={"mRemote": stub})
            for sig in sigs:
                r, c = b.local("b"), b.local("c")
                b.add_method(proxy, sig, [FieldLoad(r, "this", "mRemote"), Opaque(c, "code"),
                                          Transact(None, r, (c,))])
            b.proxies[proxy] = svc
            for sig in sigs:
                p = b.local("p")
                calls += [Alloc(p, proxy), VirtualCall(None, p, MethodRef(proxy, sig))]
        # manager wrapper wired only by boot code
        b.new_class(mgr, fields={"mServ": stub})
        for sig in sigs:
            s = b.local("m")
            b.add_method(mgr, sig, [FieldLoad(s, "this", "mServ"), VirtualCall(None, s, MethodRef(stub, sig))])
        b.managers[key] = mgr
        m, g = b.local("mgr"), b.local("svc")
        calls += [GetSystemService(m, Lit(key)), VirtualCall(None, m, MethodRef(mgr, rng.choice(sigs))),
                  GetService(g, key), VirtualCall(None, g, MethodRef(stub, rng.choice(sigs)))]
        b.add_method("gen.Api", MethodSig(f"useSvc{k}"), calls)
        api.append((mgr, sigs))
    return api


def generate_framework(spec: CorpusSpec, index: int) -> FrameworkModel:
    rng = random.Random(spec.seed * 1_000_003 + index)
    b = _Builder(spec, rng, index)
    b.new_class("gen.Api")
    _coverage(b)
    if spec.services:
        _services(b)

    # random class hierarchy
    n_classes = rng.randint(*spec.classes)
    names = [f"gen.C{i}" for i in range(n_classes)]
    pool = [f"m{j}" for j in range(spec.methods_per_class[1] + 1)]
    for i, name in enumerate(names):
        sup = rng.choice(names[:i]) if i and rng.random() < 0.5 else None
        b.new_class(name, superclass=sup, abstract=rng.random() < 0.2, public=rng.random() < 0.85)
        for fname in ("f0", "f1"):
            if rng.random() < 0.5:
                b.classes[name]["fields"][fname] = rng.choice(names[:i + 1])
    hier_parent = {n: b.classes[n]["superclass"] for n in names}

    def cone(root: str) -> List[str]:
        out = []
        for n in names:
            cur = n
            while cur is not None:
                if cur == root:
                    out.append(n)
                    break
                cur = hier_parent[cur]
        return out

    plain: List[Tuple[str, MethodSig, bool]] = []
    for name in names:
        for mname in rng.sample(pool, rng.randint(*spec.methods_per_class)):
            static = rng.random() < 0.15
            plain.append((name, MethodSig("s" + mname if static else mname), static))

    # a static method shadows nothing; an instance method may override one higher up
    declared: Dict[Tuple[str, MethodSig], bool] = {(c, s): st for c, s, st in plain}

    def lookup(cls: str, sig: MethodSig) -> Optional[str]:
        cur: Optional[str] = cls
        while cur is not None:
            if (cur, sig) in declared and not declared[(cur, sig)]:
                return cur
            cur = hier_parent[cur]
        return None

    bodies: Dict[Tuple[str, MethodSig], List[Statement]] = {(c, s): [] for c, s, _ in plain}

    def call_stmts(caller: Tuple[str, MethodSig, bool], target: Tuple[str, MethodSig, bool]) -> List[Statement]:
        tcls, tsig, tstatic = target
        ref = MethodRef(tcls, tsig)
        if tstatic:
            return [StaticCall(None, ref)]
        receivers = [c for c in cone(tcls) if not b.classes[c]["abstract"] and lookup(c, tsig) is not None]
        ccls, _, cstatic = caller
        fields = b.classes[ccls]["fields"]
        typed = [f for f, t in sorted(fields.items()) if t in cone(tcls)]
        r = rng.random()
        if not cstatic and typed and r < 0.25:
            v = b.local("r")
            return [FieldLoad(v, "this", rng.choice(typed)), VirtualCall(None, v, ref)]
        if not cstatic and ccls in cone(tcls) and lookup(ccls, tsig) is not None and r < 0.45:
            return [VirtualCall(None, "this", ref)]
        if not receivers:
            return []
        v = b.local("r")
        return [Alloc(v, rng.choice(receivers)), VirtualCall(None, v, ref)]

    for caller in plain:
        ccls, csig, cstatic = caller
        body = bodies[(ccls, csig)]
        for _ in range(3):
            if rng.random() < spec.call_density:
                target = rng.choice(plain)
                body += call_stmts(caller, target)
                if rng.random() < spec.cycle_prob:
                    bodies[(target[0], target[1])] += call_stmts(target, caller)
        if not cstatic and b.classes[ccls]["fields"] and rng.random() < 0.3:
            fname, ftype = rng.choice(sorted(b.classes[ccls]["fields"].items()))
            concrete = [c for c in cone(ftype) if not b.classes[c]["abstract"]]
            if concrete:
                v = b.local("o")
                body += [Alloc(v, rng.choice(concrete)), FieldStore("this", fname, v)]
        if spec.pep_density > 0 and b.perms and rng.random() < spec.pep_density:
            body += b.pep_statements(rng.choice(("literal", "literal", "flow", "array", "unresolved")), cstatic)
        if spec.pep_density > 0 and b.perms and rng.random() < spec.pep_density / 3:
            body += b.descent_chain(ccls, rng.randint(1, 3))

    for ccls, csig, cstatic in plain:
        body = bodies[(ccls, csig)]
        if len(body) >= 2 and rng.random() < spec.identity_prob:
            lo = rng.randrange(len(body))
            hi = rng.randrange(lo, len(body)) + 1
            body = body[:lo] + [ClearIdentity()] + body[lo:hi] + [RestoreIdentity()] + body[hi:]
        b.add_method(ccls, csig, body, public=rng.random() < 0.75, static=cstatic)

    # entry points reaching the random part
    entry_calls: List[Statement] = []
    for target in rng.sample(plain, min(len(plain), 3)):
        entry_calls += call_stmts(("gen.Api", MethodSig("run"), True), target)
    b.add_method("gen.Api", MethodSig("run"), entry_calls, static=True)

    fw = _freeze(b)
    errs = errors(validate_framework(fw))
    if errs:
        raise PBIRError(errs)
    return fw


def generate_apps(fw: FrameworkModel, spec: CorpusSpec, index: int) -> Tuple[AppModel, ...]:
    rng = random.Random(spec.seed * 7_919 + index * 104_729 + 1)
    entries = entry_points(fw, "cha")
    hier = Hierarchy(fw.classes)
    apps = []
    for j in range(spec.apps):
        name = f"app{index}_{j}"
        cls = f"{name}.Main"
        units: List[List[Statement]] = []
        for e in rng.sample(entries, min(len(entries), rng.randint(0, 4))):
            m = fw.method(e)
            args = tuple(Lit("x") for _ in e.sig.params)
            if m.static:
                units.append([StaticCall(None, e, args)])
                continue
            v = f"x{len(units)}"
            if fw.classes[e.cls].is_abstract or not hier.concrete_subtypes(e.cls):
                first: Statement = Opaque(v, "framework-object")
            else:
                first = Alloc(v, e.cls)
            units.append([first, VirtualCall(None, v, e, args)])
        split = rng.randint(0, len(units))
        calls = [s for u in units[:split] for s in u]
        rest = [s for u in units[split:] for s in u]
        helper = MethodSig("work")
        run_body: List[Statement] = calls + [VirtualCall(None, "this", MethodRef(cls, helper)),
                                                           Return()]
        if rng.random() < spec.reflection_prob:
            run_body.insert(0, Marker(rng.choice(("reflect", "loadClass"))))
        methods = {
            MethodSig("run"): MethodDef(MethodSig("run"), (), True, False, False, tuple(run_body)),
            helper: MethodDef(helper, (), False, False, False, tuple(rest) + (Return(),)),
        }
        declared = frozenset(rng.sample(sorted(fw.permissions), rng.randint(0, len(fw.permissions))))
        kinds = {s.kind for s in run_body if isinstance(s, Marker)}
        app = AppModel(name, declared, {cls: ClassDef(cls, methods=methods)},
                       "reflect" in kinds, "loadClass" in kinds)
        errs = errors(validate_app(app, framework=fw))
        if errs:
            raise PBIRError(errs)
        apps.append(app)
    return tuple(apps)


def generate_corpus(spec: CorpusSpec) -> List[CorpusItem]:
    """Deterministic under ``spec.seed``."""
    spec.validate()
    out = []
    for i in range(spec.count):
        fw = generate_framework(spec, i)
        out.append(CorpusItem(fw, generate_apps(fw, spec, i)))
    return out
