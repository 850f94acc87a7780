from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from permlens.gap import (
    A_SMALLER, B_SMALLER, CLASSES, IDENTICAL, INCOMPARABLE, AccessMatrix, AccessVector, AppDiscarded,
    MapMismatch, analyze_app, build_matrix, diff_maps, extract_av, gap, infer_permissions,
)
from permlens.pbir import parse_app
from permlens.pipeline import RewriteOptions, analyze
from permlens.propagate import PermissionMap

from conftest import FRAMEWORK_FIXTURES, corpus, load_app, load_fw
from helpers import framework


@pytest.fixture(scope="module")
def worked_map():
    return analyze(load_fw("worked")).map


def test_worked_matrix(worked_map):
    m = build_matrix(worked_map)
    assert m.perm_order == ("P1", "P2", "P3")
    assert m.as_tuples() == [(1, 0, 0), (1, 0, 0), (0, 0, 0), (0, 1, 0)]


def test_worked_app(worked_map):
    fw = load_fw("worked")
    m = build_matrix(worked_map)
    app = load_app("worked_app", fw)
    av = extract_av(app, fw, m.entry_order)
    assert av.as_tuple() == (1, 1, 1, 0)
    assert infer_permissions(av, m) == {"P1"}
    report = analyze_app(app, fw, worked_map)
    assert report.gap == {"P2"} and report.exit_code == 1
    assert report.witnesses == {"P1": m.entry_order[0]}


def test_reflection_discards(worked_map):
    fw = load_fw("worked")
    app = load_app("reflect_app", fw)
    with pytest.raises(AppDiscarded, match="reflection"):
        extract_av(app, fw, build_matrix(worked_map).entry_order)
    r = analyze_app(app, fw, worked_map)
    assert r.discarded and r.exit_code == 2 and r.reason == "reflection"


def test_missing_does_not_fail(worked_map):
    fw = load_fw("worked")
    r = analyze_app(load_app("undeclared_app", fw), fw, worked_map)
    assert r.missing == {"P2"} and r.gap == set() and r.exit_code == 0


def test_exact_declaration(worked_map):
    fw = load_fw("worked")
    r = analyze_app(load_app("exact_app", fw), fw, worked_map)
    assert r.exit_code == 0 and r.declared == r.inferred


def test_empty_app_declaring_nothing(worked_map):
    fw = load_fw("worked")
    r = analyze_app(parse_app('app "none" {\n}\n', framework=fw), fw, worked_map)
    assert (r.inferred, r.gap, r.exit_code) == (frozenset(), frozenset(), 0)


def test_timed_out_entry_discards(worked_map):
    fw = load_fw("worked")
    e1 = worked_map.entries[0]
    per_entry = {e: p for e, p in worked_map.per_entry.items() if e != e1}
    timed = replace(worked_map, per_entry=per_entry, timeouts=frozenset({e1}))
    r = analyze_app(load_app("worked_app", fw), fw, timed)
    assert r.discarded and "timed out" in r.reason


def test_ambiguous_dispatch_sets_every_candidate():
    fw = framework("""
  public class a.Base {
    public method m() {
      virtualinvoke this <android.content.Context: void checkPermission(String)>("P1")
    }
  }
  public class a.Sub extends a.Base {
    public method m() {
      virtualinvoke this <android.content.Context: void checkPermission(String)>("P2")
    }
  }""")
    app = parse_app('app "amb" declares [P1, P2] {\n  public class x.Main {\n    public method go(b: a.Base) {\n'
                    '      virtualinvoke b <a.Base: void m()>()\n    }\n  }\n}\n', framework=fw)
    r = analyze_app(app, fw, analyze(fw).map)
    assert r.inferred == {"P1", "P2"} and r.gap == set()
    assert set(r.ambiguous) == {"<a.Base: void m()>", "<a.Sub: void m()>"}


def test_infer_shape_mismatch(worked_map):
    m = build_matrix(worked_map)
    with pytest.raises(ValueError):
        infer_permissions(AccessVector(("x",), np.array([True])), m)


def _naive_ip(av, rows, perms):
    out = set()
    for i, called in enumerate(av):
        if called:
            for j, p in enumerate(perms):
                if rows[i][j]:
                    out.add(p)
    return out


matrices = st.integers(1, 8).flatmap(lambda n: st.integers(1, 6).flatmap(lambda k: st.tuples(
    st.lists(st.lists(st.booleans(), min_size=k, max_size=k), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n))))


@given(matrices)
def test_ip_matches_loops_and_is_monotone(data):
    rows, av1, av2 = data
    n, k = len(rows), len(rows[0])
    entries = tuple(f"e{i}" for i in range(n))
    perms = tuple(f"P{j}" for j in range(k))
    m = AccessMatrix(entries, perms, np.array(rows, dtype=bool))
    lo = [a and b for a, b in zip(av1, av2)]
    ip_lo = infer_permissions(AccessVector(entries, np.array(lo, dtype=bool)), m)
    ip_hi = infer_permissions(AccessVector(entries, np.array(av1, dtype=bool)), m)
    assert ip_lo == _naive_ip(lo, rows, perms)
    assert ip_hi == _naive_ip(av1, rows, perms)
    assert ip_lo <= ip_hi


@given(st.sets(st.sampled_from(["P1", "P2", "P3"])), st.sets(st.sampled_from(["P1", "P2", "P3"])))
def test_gap_is_set_difference(declared, ip):
    text = 'app "a" declares [' + ", ".join(sorted(declared)) + '] {\n}\n'
    r = gap(parse_app(text), ip)
    assert r.gap == declared - ip and r.missing == ip - declared
    assert r.exit_code == (1 if declared - ip else 0)


MIRROR = {IDENTICAL: IDENTICAL, INCOMPARABLE: INCOMPARABLE, A_SMALLER: B_SMALLER, B_SMALLER: A_SMALLER}


def _map(per_entry, timeouts=()):
    return PermissionMap("f", "h", "cha", (), {e: frozenset(p) for e, p in per_entry.items()},
                         frozenset(timeouts), ("P1", "P2", "P3"))


sets = st.frozensets(st.sampled_from(["P1", "P2", "P3"]))


@given(st.dictionaries(st.sampled_from("abcdef"), sets), st.dictionaries(st.sampled_from("abcdef"), sets))
def test_diff_mirror_and_partition(da, db):
    a, b = _map(da), _map(db)
    ab, ba = diff_maps(a, b), diff_maps(b, a)
    assert {e: MIRROR[c] for e, c in ab.classification.items()} == dict(ba.classification)
    common = set(da) & set(db)
    assert sum(ab.counts().values()) == len(common)
    assert set(ab.only_a) == set(da) - set(db) and set(ab.only_b) == set(db) - set(da)
    assert set(ab.counts()) == set(CLASSES)


def test_diff_identical_and_timeouts():
    a = _map({"x": {"P1"}, "y": set()}, timeouts=("z",))
    b = _map({"x": {"P1"}, "y": set(), "z": {"P2"}})
    d = diff_maps(a, b)
    assert d.counts()[IDENTICAL] == 2 and d.inconclusive == ("z",)
    assert diff_maps(a, a).counts()[IDENTICAL] == 2


def test_diff_rejects_other_framework(worked_map):
    with pytest.raises(MapMismatch):
        diff_maps(worked_map, analyze(load_fw("binder")).map)


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES)
def test_pta_never_larger_on_fixtures(name):
    fw = load_fw(name)
    d = diff_maps(analyze(fw, "cha").map, analyze(fw, "pta").map)
    assert d.counts()[A_SMALLER] == 0 and d.counts()[INCOMPARABLE] == 0


def test_binder_explosion_classified():
    fw = load_fw("binder")
    d = diff_maps(analyze(fw, options=RewriteOptions(redirect=False)).map, analyze(fw).map)
    assert d.counts()[B_SMALLER] >= 1


def test_matrix_for_corpus_matches_map():
    for item in corpus(count=10):
        pm = analyze(item.framework).map
        m = build_matrix(pm)
        for e in pm.entries:
            assert {p for p, bit in zip(m.perm_order, m.row(e)) if bit} == pm.per_entry[e]
