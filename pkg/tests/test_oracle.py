import time

import pytest
from hypothesis import given, strategies as st

from permlens.corpus import CorpusSpec, default_seed, generate_corpus, generate_framework
from permlens.ir import MethodRef, MethodSig, entry_points, errors, is_synthetic, validate_app, validate_framework
from permlens.oracle import MAX_METHODS, OracleTooLarge, naive_targets, oracle_map, oracle_permissions
from permlens.pbir import format_framework
from permlens.pipeline import analyze, prepare
from permlens.strings import CATEGORIES

from conftest import FRAMEWORK_FIXTURES, corpus, load_fw
from helpers import graph_framework


def compare(fw, analysis):
    r = analyze(fw, analysis)
    entries = [e for e in entry_points(r.framework.model, analysis) if not is_synthetic(e.cls)]
    expected = oracle_map(r.framework, entries, None if analysis == "cha" else r.graph.edges)
    return {e: (set(r.map.per_entry[e]), p) for e, p in expected.items() if r.map.per_entry[e] != p}


def test_oracle_worked(worked):
    rf = prepare(worked)
    e1 = MethodRef("worked.Api", MethodSig("e1"))
    e3 = MethodRef("worked.Api", MethodSig("e3"))
    assert oracle_permissions(rf, e1) == {"P1"}
    assert oracle_permissions(rf, e3) == set()


def test_oracle_size_bound():
    fw = graph_framework(MAX_METHODS + 1, [], {})
    with pytest.raises(OracleTooLarge):
        oracle_permissions(prepare(fw), MethodRef("g.G", MethodSig("m0")))


def test_oracle_unknown_entry(worked):
    with pytest.raises(KeyError):
        oracle_permissions(prepare(worked), MethodRef("worked.Api", MethodSig("nope")))


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES)
@pytest.mark.parametrize("analysis", ["cha", "pta"])
def test_oracle_agrees_on_fixtures(name, analysis):
    assert compare(load_fw(name), analysis) == {}


def test_oracle_agrees_on_100_random_frameworks():
    start = time.perf_counter()
    items = corpus(count=100)
    for item in items:
        assert sum(len(c.methods) for c in item.framework.classes.values()) <= MAX_METHODS
        for analysis in ("cha", "pta"):
            assert compare(item.framework, analysis) == {}
    assert time.perf_counter() - start < 60


def test_naive_dispatch_matches_cha_on_corpus():
    from permlens.callgraph import build_cha
    for item in corpus(count=20):
        rf = prepare(item.framework)
        g = build_cha(rf)
        for caller in g.nodes:
            for idx, stmt in enumerate(rf.model.method(caller).body):
                got = {c for i, c in g.out_edges(caller) if i == idx}
                if got:
                    assert got == naive_targets(rf.model, stmt)


def test_corpus_deterministic_and_valid():
    spec = CorpusSpec(seed=11, count=5)
    a, b = generate_corpus(spec), generate_corpus(spec)
    assert [format_framework(i.framework) for i in a] == [format_framework(i.framework) for i in b]
    for item in a:
        assert not errors(validate_framework(item.framework))
        for app in item.apps:
            assert not errors(validate_app(app, framework=item.framework))


@given(st.integers(0, 10**6))
def test_every_framework_covers_categories_and_cycles(seed):
    from permlens.propagate import tarjan
    fw = generate_framework(CorpusSpec(seed=seed), 0)
    r = analyze(fw)
    assert {x["category"] for x in r.map.resolutions} == set(CATEGORIES)
    nodes = r.graph.sorted_nodes()
    comps = tarjan(nodes, r.graph.successors)
    assert any(len(c) > 1 for c in comps)


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("PERMLENS_SEED", "42")
    assert default_seed() == 42
    monkeypatch.delenv("PERMLENS_SEED")
    assert default_seed(5) == 5


@pytest.mark.parametrize("bad", [dict(call_density=1.5), dict(classes=(5, 2)), dict(count=-1),
                                 dict(proxies=2, services=1)])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        CorpusSpec(**bad).validate()
