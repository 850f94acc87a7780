import pytest

from permlens.callgraph import DISPATCH, REDIRECTED, STATIC, SYNTHETIC_INIT, build_cha, reachable_from
from permlens.ir import MethodRef, MethodSig
from permlens.pipeline import RewriteOptions, prepare

from conftest import load_fw
from helpers import framework

DISPATCH_FW = """
  public class d.A {
    public method run() {
      x = new d.B
      virtualinvoke x <d.A: void m()>()
      y = new d.D
      virtualinvoke y <d.D: void <init>()>()
    }
    method m() {
    }
  }
  class d.B extends d.A {
    method <init>() {
    }
    method m() {
    }
  }
  class d.C extends d.A {
    method m() {
    }
  }
  class d.D extends d.B {
  }
  public class d.S {
    public static method helper() {
    }
    public method go() {
      staticinvoke <d.S: void helper()>()
    }
  }
"""


def ref(cls, name, ptypes=()):
    return MethodRef(cls, MethodSig(name, tuple(ptypes)))


@pytest.fixture(scope="module")
def cha():
    rf = prepare(framework(DISPATCH_FW), "cha")
    return rf, build_cha(rf)


def test_cone_dispatch(cha):
    _, g = cha
    run = ref("d.A", "run")
    targets = {c for i, c in g.out_edges(run) if i == 1}
    assert targets == {ref("d.A", "m"), ref("d.B", "m"), ref("d.C", "m")}


def test_constructor_not_inherited(cha):
    _, g = cha
    assert (ref("d.A", "run"), 3, ref("d.D", "<init>")) in g.dangling
    assert any("unresolved dispatch" in d.message for d in g.diagnostics)


def test_static_call_and_provenance(cha):
    rf, g = cha
    go, helper = ref("d.S", "go"), ref("d.S", "helper")
    assert g.provenance[(go, 0, helper)] == STATIC
    assert g.provenance[(ref("d.A", "run"), 1, ref("d.B", "m"))] == DISPATCH
    main_edges = [e for e in g.edges if e[0] == rf.synthetic_main]
    assert main_edges and all(g.provenance[e] == SYNTHETIC_INIT for e in main_edges)


def test_reachable_from(cha):
    rf, g = cha
    assert ref("d.C", "m") in reachable_from(g, rf.synthetic_main)
    assert reachable_from(g, ref("d.C", "m")) == {ref("d.C", "m")}
    with pytest.raises(KeyError):
        reachable_from(g, ref("d.Z", "nope"))


def test_requires_pipeline():
    from permlens.rewrite import lift
    rf = lift(framework(DISPATCH_FW))
    object.__setattr__(rf, "model", rf.base)
    with pytest.raises(ValueError):
        build_cha(rf)


def test_transact_reaches_every_on_transact():
    rf = prepare(load_fw("binder"), "cha", RewriteOptions(redirect=False))
    g = build_cha(rf)
    on_transact = {c for _, _, c in g.edges if c.sig.name == "onTransact"}
    assert {c.cls for c in on_transact} >= {"svc.S1Stub", "svc.S2Stub", "svc.S3Stub"}


def test_redirected_provenance():
    rf = prepare(load_fw("binder"), "cha")
    g = build_cha(rf)
    provs = {g.provenance[e] for e in g.edges}
    assert REDIRECTED in provs
    assert not any(c.sig.name == "onTransact" for _, _, c in g.edges)


def test_serialization_deterministic(cha):
    _, g = cha
    lines = g.to_lines()
    assert len(lines) == len(g.edges)
    assert all(" -> " in line and line.endswith("]") for line in lines)
    assert g.to_dot().startswith("digraph")
    assert g.to_dot() == build_cha(prepare(framework(DISPATCH_FW), "cha")).to_dot()
