import random

import pytest
from hypothesis import given, settings, strategies as st

from permlens import pta as pta_mod
from permlens.callgraph import build_cha
from permlens.corpus import CorpusSpec, generate_framework
from permlens.ir import MethodRef, MethodSig, is_synthetic
from permlens.pipeline import RewriteOptions, analyze, prepare
from permlens.propagate import TIMEOUT
from permlens.pta import build_pta, resolve_call

from conftest import FRAMEWORK_FIXTURES, corpus, load_fw
from helpers import chain_framework, framework

FIELDS_FW = """
  public class f.Box {
    field a: f.Base
    field b: f.Base
    public method run() {
      x = new f.X
      y = new f.Y
      this.a = x
      this.b = y
      p = this.a
      virtualinvoke p <f.Base: void m()>()
    }
  }
  abstract class f.Base {
    abstract method m()
  }
  class f.X extends f.Base {
    method m() {
    }
  }
  class f.Y extends f.Base {
    method m() {
    }
  }
"""


def ref(cls, name):
    return MethodRef(cls, MethodSig(name))


def test_field_sensitive_dispatch():
    rf = prepare(framework(FIELDS_FW), "pta")
    state, g = build_pta(rf)
    run = ref("f.Box", "run")
    assert resolve_call(state, run, 5) == {ref("f.X", "m")}
    cha = build_cha(prepare(framework(FIELDS_FW), "cha"))
    assert {c for i, c in cha.out_edges(run) if i == 5} == {ref("f.X", "m"), ref("f.Y", "m")}


def test_resolve_call_errors():
    state, _ = build_pta(prepare(framework(FIELDS_FW), "pta"))
    with pytest.raises(KeyError):
        resolve_call(state, ref("f.Box", "run"), 99)
    with pytest.raises(TypeError):
        resolve_call(state, ref("f.Box", "run"), 0)


def test_bad_timeout():
    with pytest.raises(ValueError):
        build_pta(prepare(framework(FIELDS_FW), "pta"), timeout=0)


def _edges_subset(fw):
    cha = build_cha(prepare(fw, "cha"))
    _, pg = build_pta(prepare(fw, "pta"))
    # drop the points-to-only initialization plumbing; compare framework edges
    real = {e for e in pg.edges if not is_synthetic(e[0].cls) and not is_synthetic(e[2].cls)}
    return real - cha.edges


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES)
def test_pta_edges_within_cha(name):
    assert _edges_subset(load_fw(name)) == set()


def test_pta_edges_within_cha_corpus():
    for item in corpus(count=30):
        assert _edges_subset(item.framework) == set()


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(0, 2**32 - 1))
def test_worklist_order_irrelevant(seed, order):
    rf = prepare(generate_framework(CorpusSpec(seed=seed), 0), "pta")
    s1, g1 = build_pta(rf)
    s2, g2 = build_pta(rf, rng=random.Random(order))
    assert s1.var_pts == s2.var_pts and s1.field_pts == s2.field_pts
    assert g1.edges == g2.edges and g1.suppressed == g2.suppressed


def test_suppressed_sites_without_initialization():
    opts = RewriteOptions(service_init=False, manager_init=False)
    _, g = build_pta(prepare(load_fw("account"), "pta", opts))
    names = {(r.sig.name, i) for r, i in g.suppressed}
    assert ("getPassword", 1) in names


def test_timeout_marks_every_entry(monkeypatch):
    clock = iter(range(0, 10**9, 1000))
    monkeypatch.setattr(pta_mod.time, "monotonic", lambda: next(clock))
    r = analyze(chain_framework(300), "pta", timeout=1.0)
    assert r.points_to.timed_out
    assert r.map.per_entry == {}
    assert r.map.timeouts == frozenset(r.map.entries) and r.map.entries
    assert all(r.map.permissions(e) is None for e in r.map.entries)
    assert TIMEOUT in r.map.dumps()
    assert any(u["kind"] == "timeout" for u in r.map.unsound)


def test_dump_lists_allocation_sites():
    state, _ = build_pta(prepare(framework(FIELDS_FW), "pta"))
    text = "\n".join(state.dump())
    assert "<f.Box: void run()>/y -> {<f.Box: void run()>@1}" in text
    assert "<f.X: void m()>/this -> {<f.Box: void run()>@0}" in text
    assert "f.Y: void m()" not in text
