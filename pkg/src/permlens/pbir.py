"""Reader and writer for the textual PBIR format.

See ``docs/pbir.md`` for the grammar.  One statement per line (``;`` may also
separate statements), braces for nesting, ``#`` or ``//`` comments.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

from .ir import (
    Alloc, AppModel, ClassDef, ClearIdentity, Copy, Diagnostic, FieldLoad, FieldStore,
    FrameworkModel, GetService, GetSystemService, Lit, Marker, MARKER_KINDS, MethodDef,
    MethodRef, MethodSig, Opaque, PBIRError, RestoreIdentity, Return, Statement, StaticCall,
    StaticLoad, StaticStore, StringArrayConst, StringConst, Transact, VirtualCall, VOID,
    errors, validate_app, validate_framework,
)

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>(?:\#|//)[^\n]*)
  | (?P<nl>\n)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<sig><\s*[^\s:<>]+\s*:\s*[^\s()<>]+\s+(?:<init>|<clinit>|[^\s()<>]+)\s*\([^()]*\)\s*>)
  | (?P<punct>->|::|[{}()\[\],;:=])
  | (?P<ident><init>|<clinit>|[A-Za-z_$][\w$]*(?:\.[A-Za-z_$][\w$]*)*)
""", re.VERBOSE)

_SIG_RE = re.compile(r"<\s*([^\s:<>]+)\s*:\s*([^\s()<>]+)\s+(<init>|<clinit>|[^\s()<>]+)\s*\(([^()]*)\)\s*>")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str, filename: str = "<string>") -> List[Token]:
    tokens: List[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PBIRError([Diagnostic("error", f"syntax error: unexpected character {text[pos]!r}",
                                        line, pos - line_start + 1, filename)])
        kind = m.lastgroup
        if kind == "nl":
            tokens.append(Token("nl", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def parse_method_ref(text: str) -> MethodRef:
    m = _SIG_RE.fullmatch(text.strip())
    if m is None:
        raise ValueError(f"not a method reference: {text!r}")
    cls, ret, name, params = m.groups()
    plist = tuple(p.strip() for p in params.split(",") if p.strip())
    return MethodRef(cls, MethodSig(name, plist, ret))


class _Parser:
    def __init__(self, text: str, filename: str):
        self.filename = filename
        self.toks = tokenize(text, filename)
        self.i = 0
        self.positions: Dict = {}

    # token helpers
    def peek(self, skip_nl: bool = True) -> Token:
        j = self.i
        while skip_nl and self.toks[j].kind == "nl":
            j += 1
        return self.toks[j]

    def skip_nl(self) -> None:
        while self.toks[self.i].kind in ("nl",) or (self.toks[self.i].kind == "punct"
                                                     and self.toks[self.i].text == ";"):
            self.i += 1

    def error(self, msg: str, tok: Optional[Token] = None) -> PBIRError:
        tok = tok or self.toks[self.i]
        return PBIRError([Diagnostic("error", f"syntax error: {msg}", tok.line, tok.col, self.filename)])

    def next(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        if text in ("{", "}"):
            self.skip_nl()
        tok = self.next()
        if tok.text != text or tok.kind == "string":
            raise self.error(f"expected '{text}', found '{tok.text or 'end of input'}'", tok)
        return tok

    def ident(self, what: str = "identifier") -> Token:
        tok = self.next()
        if tok.kind != "ident":
            raise self.error(f"expected {what}, found '{tok.text or 'end of input'}'", tok)
        return tok

    def string(self) -> str:
        tok = self.next()
        if tok.kind != "string":
            raise self.error(f"expected string literal, found '{tok.text or 'end of input'}'", tok)
        return json.loads(tok.text)

    def at(self, text: str) -> bool:
        tok = self.toks[self.i]
        return tok.text == text and tok.kind in ("ident", "punct")

    def end_of_statement(self) -> None:
        tok = self.toks[self.i]
        if tok.kind == "nl" or (tok.kind == "punct" and tok.text == ";"):
            self.i += 1
        elif not (tok.kind == "punct" and tok.text == "}") and tok.kind != "eof":
            raise self.error(f"expected end of statement, found '{tok.text}'")

    # grammar
    def parse_framework(self) -> FrameworkModel:
        self.skip_nl()
        self.expect("framework")
        name = self.string()
        self.expect("{")
        perms: List[str] = []
        classes: Dict[str, ClassDef] = {}
        services: Dict[str, str] = {}
        managers: Dict[str, str] = {}
        proxies: Dict[str, str] = {}
        while True:
            self.skip_nl()
            tok = self.peek()
            if tok.text == "}":
                self.next()
                break
            if tok.kind == "eof":
                raise self.error("unterminated framework block", tok)
            if tok.text == "permission":
                self.next()
                ptok = self.ident("permission name")
                if ptok.text in perms:
                    raise self.error(f"duplicate permission '{ptok.text}'", ptok)
                perms.append(ptok.text)
                self.end_of_statement()
            elif tok.text in ("service", "manager"):
                self.next()
                key = self.string()
                self.expect("=")
                target = self.ident("class name").text
                registry = services if tok.text == "service" else managers
                if key in registry:
                    raise self.error(f"duplicate {tok.text} key '{key}'", tok)
                registry[key] = target
                self.end_of_statement()
            elif tok.text == "proxy":
                self.next()
                proxy = self.ident("proxy class").text
                self.expect("for")
                proxies[proxy] = self.ident("service class").text
                self.end_of_statement()
            else:
                cls = self.parse_class()
                if cls.name in classes:
                    raise self.error(f"duplicate class '{cls.name}'", tok)
                classes[cls.name] = cls
        self.skip_nl()
        if self.peek().kind != "eof":
            raise self.error("trailing input after framework block", self.peek())
        return FrameworkModel(name, frozenset(perms), classes, services, managers, proxies)

    def parse_app(self) -> AppModel:
        self.skip_nl()
        self.expect("app")
        name = self.string()
        declared: List[str] = []
        if self.at("declares"):
            self.next()
            self.expect("[")
            while not self.at("]"):
                declared.append(self.ident("permission name").text)
                if self.at(","):
                    self.next()
            self.expect("]")
        self.expect("{")
        classes: Dict[str, ClassDef] = {}
        while True:
            self.skip_nl()
            tok = self.peek()
            if tok.text == "}":
                self.next()
                break
            if tok.kind == "eof":
                raise self.error("unterminated app block", tok)
            cls = self.parse_class()
            if cls.name in classes:
                raise self.error(f"duplicate class '{cls.name}'", tok)
            classes[cls.name] = cls
        self.skip_nl()
        if self.peek().kind != "eof":
            raise self.error("trailing input after app block", self.peek())
        markers = {s.kind for c in classes.values() for m in c.methods.values()
                   for s in m.body if isinstance(s, Marker)}
        return AppModel(name, frozenset(declared), classes,
                        uses_reflection="reflect" in markers,
                        uses_dynamic_loading="loadClass" in markers)

    def parse_class(self) -> ClassDef:
        start = self.peek()
        mods = set()
        while self.peek().text in ("public", "private", "abstract"):
            mods.add(self.next().text)
        kw = self.next()
        if kw.text not in ("class", "interface"):
            raise self.error(f"expected class declaration, found '{kw.text}'", kw)
        name = self.ident("class name").text
        self.positions[name] = (start.line, start.col)
        superclass = None
        interfaces: List[str] = []
        if self.at("extends"):
            self.next()
            superclass = self.ident("superclass").text
        if self.at("implements"):
            self.next()
            interfaces.append(self.ident("interface").text)
            while self.at(","):
                self.next()
                interfaces.append(self.ident("interface").text)
        self.expect("{")
        fields: Dict[str, str] = {}
        static_fields: Dict[str, str] = {}
        methods: Dict[MethodSig, MethodDef] = {}
        while True:
            self.skip_nl()
            tok = self.peek()
            if tok.text == "}":
                self.next()
                break
            if tok.kind == "eof":
                raise self.error(f"unterminated class '{name}'", tok)
            mmods = []
            while self.peek().text in ("public", "private", "static", "abstract"):
                mmods.append(self.next().text)
            kind = self.next()
            if kind.text == "field":
                if set(mmods) - {"static"}:
                    raise self.error("fields only accept the 'static' modifier", kind)
                fname = self.ident("field name").text
                self.expect(":")
                ftype = self.ident("type").text
                target = static_fields if "static" in mmods else fields
                if fname in fields or fname in static_fields:
                    raise self.error(f"duplicate field '{fname}' in {name}", kind)
                target[fname] = ftype
                self.end_of_statement()
            elif kind.text == "method":
                m = self.parse_method(name, set(mmods), tok)
                if m.sig in methods:
                    raise PBIRError([Diagnostic("error", f"duplicate signature {m.sig} in class {name}",
                                                tok.line, tok.col, self.filename)])
                methods[m.sig] = m
            else:
                raise self.error(f"expected 'field' or 'method', found '{kind.text}'", kind)
        return ClassDef(name, superclass, tuple(interfaces), "abstract" in mods and kw.text == "class",
                        kw.text == "interface", "public" in mods, fields, static_fields, methods)

    def parse_method(self, cname: str, mods: set, start: Token) -> MethodDef:
        name = self.ident("method name").text
        self.expect("(")
        pnames: List[str] = []
        ptypes: List[str] = []
        while not self.at(")"):
            pnames.append(self.ident("parameter name").text)
            self.expect(":")
            ptypes.append(self.ident("parameter type").text)
            if self.at(","):
                self.next()
            elif not self.at(")"):
                raise self.error("expected ',' or ')' in parameter list")
        self.expect(")")
        ret = VOID
        if self.at(":"):
            self.next()
            ret = self.ident("return type").text
        sig = MethodSig(name, tuple(ptypes), ret)
        self.positions[(cname, sig)] = (start.line, start.col)
        body: List[Statement] = []
        if "abstract" in mods:
            self.end_of_statement()
        else:
            self.expect("{")
            while True:
                self.skip_nl()
                tok = self.peek()
                if tok.text == "}" and tok.kind == "punct":
                    self.next()
                    break
                if tok.kind == "eof":
                    raise self.error(f"unterminated method '{name}'", tok)
                self.positions[(cname, sig, len(body))] = (tok.line, tok.col)
                body.append(self.parse_statement())
                self.end_of_statement()
        return MethodDef(sig, tuple(pnames), "public" in mods, "static" in mods, "abstract" in mods, tuple(body))

    def parse_args(self) -> Tuple:
        self.expect("(")
        args: List[Union[str, Lit]] = []
        while not self.at(")"):
            tok = self.peek(skip_nl=False)
            if tok.kind == "string":
                args.append(Lit(self.string()))
            else:
                args.append(self._local())
            if self.at(","):
                self.next()
            elif not self.at(")"):
                raise self.error("expected ',' or ')' in argument list")
        self.expect(")")
        return tuple(args)

    def _local(self) -> str:
        tok = self.ident("local variable")
        if "." in tok.text:
            raise self.error(f"'{tok.text}' is not a local variable", tok)
        return tok.text

    def _sig(self) -> MethodRef:
        tok = self.next()
        if tok.kind != "sig":
            raise self.error(f"expected method reference <Class: ret name(params)>, found '{tok.text}'", tok)
        return parse_method_ref(tok.text)

    def _call(self, target: Optional[str]) -> Statement:
        kw = self.next().text
        if kw == "virtualinvoke":
            recv = self._local()
            ref = self._sig()
            return VirtualCall(target, recv, ref, self.parse_args())
        if kw == "staticinvoke":
            ref = self._sig()
            return StaticCall(target, ref, self.parse_args())
        recv = self._local()
        return Transact(target, recv, self.parse_args())

    def parse_statement(self) -> Statement:
        tok = self.peek()
        word = tok.text
        if tok.kind == "ident":
            if word == "clearIdentity":
                self.next()
                return ClearIdentity()
            if word == "restoreIdentity":
                self.next()
                return RestoreIdentity()
            if word in MARKER_KINDS:
                self.next()
                return Marker(word)
            if word == "return":
                self.next()
                nxt = self.toks[self.i]
                if nxt.kind == "ident":
                    return Return(self._local())
                return Return()
            if word in ("virtualinvoke", "staticinvoke", "transact"):
                return self._call(None)
        lhs = self.ident("statement")
        if self.at("::"):
            self.next()
            fname = self.ident("field name").text
            self.expect("=")
            return StaticStore(lhs.text, fname, self._local())
        self.expect("=")
        if "." in lhs.text:
            base, fname = lhs.text.split(".", 1)
            return FieldStore(base, fname, self._local())
        target = lhs.text
        rhs = self.peek(skip_nl=False)
        if rhs.kind == "string":
            return StringConst(target, self.string())
        if rhs.text == "[" and rhs.kind == "punct":
            self.next()
            values: List[str] = []
            while not self.at("]"):
                values.append(self.string())
                if self.at(","):
                    self.next()
            self.expect("]")
            return StringArrayConst(target, tuple(values))
        if rhs.kind != "ident":
            raise self.error(f"unexpected '{rhs.text}' on right-hand side", rhs)
        if rhs.text == "new":
            self.next()
            return Alloc(target, self.ident("class name").text)
        if rhs.text in ("virtualinvoke", "staticinvoke", "transact"):
            return self._call(target)
        if rhs.text == "opaque":
            self.next()
            label = self.string() if self.toks[self.i].kind == "string" else "unknown"
            return Opaque(target, label)
        if rhs.text == "getService":
            self.next()
            return GetService(target, self.string())
        if rhs.text == "getSystemService":
            self.next()
            if self.toks[self.i].kind == "string":
                return GetSystemService(target, Lit(self.string()))
            return GetSystemService(target, self._local())
        src = self.next().text
        if self.at("::"):
            self.next()
            return StaticLoad(target, src, self.ident("field name").text)
        if "." in src:
            base, fname = src.split(".", 1)
            return FieldLoad(target, base, fname)
        return Copy(target, src)


def _raise_on_errors(diags: List[Diagnostic], warnings: Optional[List[Diagnostic]]) -> None:
    errs = errors(diags)
    if errs:
        raise PBIRError(errs)
    if warnings is not None:
        warnings.extend(diags)


def parse_framework(text: str, filename: str = "<string>",
                    warnings: Optional[List[Diagnostic]] = None) -> FrameworkModel:
    """Parse and validate a framework; raises PBIRError with positioned diagnostics."""
    p = _Parser(text, filename)
    fw = p.parse_framework()
    _raise_on_errors(validate_framework(fw, p.positions, filename), warnings)
    return fw


def parse_app(text: str, filename: str = "<string>", framework: Optional[FrameworkModel] = None,
              warnings: Optional[List[Diagnostic]] = None) -> AppModel:
    p = _Parser(text, filename)
    app = p.parse_app()
    _raise_on_errors(validate_app(app, p.positions, filename, framework), warnings)
    return app


# --- printer ------------------------------------------------------------------

def _q(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _arg(a) -> str:
    return _q(a.value) if isinstance(a, Lit) else a


def _args(args) -> str:
    return "(" + ", ".join(_arg(a) for a in args) + ")"


def format_statement(s: Statement) -> str:
    if isinstance(s, Alloc):
        return f"{s.target} = new {s.cls}"
    if isinstance(s, Copy):
        return f"{s.target} = {s.source}"
    if isinstance(s, FieldStore):
        return f"{s.base}.{s.field} = {s.source}"
    if isinstance(s, FieldLoad):
        return f"{s.target} = {s.base}.{s.field}"
    if isinstance(s, StaticStore):
        return f"{s.cls}::{s.field} = {s.source}"
    if isinstance(s, StaticLoad):
        return f"{s.target} = {s.cls}::{s.field}"
    if isinstance(s, StringConst):
        return f"{s.target} = {_q(s.value)}"
    if isinstance(s, StringArrayConst):
        return f"{s.target} = [" + ", ".join(_q(v) for v in s.values) + "]"
    lhs = f"{s.target} = " if getattr(s, "target", None) is not None else ""
    if isinstance(s, VirtualCall):
        return f"{lhs}virtualinvoke {s.receiver} {s.method}{_args(s.args)}"
    if isinstance(s, StaticCall):
        return f"{lhs}staticinvoke {s.method}{_args(s.args)}"
    if isinstance(s, Transact):
        return f"{lhs}transact {s.receiver}{_args(s.args)}"
    if isinstance(s, GetService):
        return f"{s.target} = getService {_q(s.key)}"
    if isinstance(s, GetSystemService):
        return f"{s.target} = getSystemService {_arg(s.key)}"
    if isinstance(s, Opaque):
        return f"{s.target} = opaque {_q(s.label)}"
    if isinstance(s, ClearIdentity):
        return "clearIdentity"
    if isinstance(s, RestoreIdentity):
        return "restoreIdentity"
    if isinstance(s, Return):
        return "return" if s.source is None else f"return {s.source}"
    if isinstance(s, Marker):
        return s.kind
    raise TypeError(f"unknown statement {s!r}")


def _format_class(cls: ClassDef, out: List[str], indent: str = "  ") -> None:
    mods = ("public " if cls.public else "") + ("abstract " if cls.abstract else "")
    head = f"{indent}{mods}{'interface' if cls.interface else 'class'} {cls.name}"
    if cls.superclass:
        head += f" extends {cls.superclass}"
    if cls.interfaces:
        head += " implements " + ", ".join(cls.interfaces)
    out.append(head + " {")
    inner = indent + "  "
    for fname in sorted(cls.fields):
        out.append(f"{inner}field {fname}: {cls.fields[fname]}")
    for fname in sorted(cls.static_fields):
        out.append(f"{inner}static field {fname}: {cls.static_fields[fname]}")
    for sig in sorted(cls.methods, key=str):
        m = cls.methods[sig]
        mods = " ".join(w for w, on in (("public", m.public), ("private", not m.public),
                                         ("static", m.static), ("abstract", m.abstract)) if on)
        params = ", ".join(f"{n}: {t}" for n, t in zip(m.param_names, sig.params))
        head = f"{inner}{mods} method {sig.name}({params}): {sig.ret}"
        if m.abstract:
            out.append(head)
            continue
        out.append(head + " {")
        for s in m.body:
            out.append(f"{inner}  {format_statement(s)}")
        out.append(inner + "}")
    out.append(indent + "}")


def format_framework(fw: FrameworkModel) -> str:
    """Canonical text; independent of declaration order, so it doubles as a hash input."""
    out = [f"framework {_q(fw.name)} {{"]
    for p in sorted(fw.permissions):
        out.append(f"  permission {p}")
    for key in sorted(fw.services):
        out.append(f"  service {_q(key)} = {fw.services[key]}")
    for key in sorted(fw.managers):
        out.append(f"  manager {_q(key)} = {fw.managers[key]}")
    for proxy in sorted(fw.proxies):
        out.append(f"  proxy {proxy} for {fw.proxies[proxy]}")
    for cname in sorted(fw.classes):
        _format_class(fw.classes[cname], out)
    out.append("}")
    return "\n".join(out) + "\n"


def format_app(app: AppModel) -> str:
    decl = ", ".join(sorted(app.declared))
    out = [f"app {_q(app.name)} declares [{decl}] {{"]
    for cname in sorted(app.classes):
        _format_class(app.classes[cname], out)
    out.append("}")
    return "\n".join(out) + "\n"
