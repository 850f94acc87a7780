import pytest
from hypothesis import given, strategies as st

from permlens.ir import MethodRef, MethodSig
from permlens.pipeline import analyze
from permlens.strings import (
    ARRAY, CATEGORIES, DESCENT, FLOW, LITERAL, UNRESOLVED, MalformedStack, PermissionResolution,
    classify_resolutions, local_string_values, resolve_permission,
)

from conftest import corpus, load_fw

API = "str.Api"


def m(name, ptypes=()):
    return MethodRef(API, MethodSig(name, tuple(ptypes)))


@pytest.fixture(scope="module")
def model():
    return load_fw("strings")


@pytest.mark.parametrize("method,idx,perms,category", [
    ("direct", 0, {"CAMERA"}, LITERAL),
    ("flow", 2, {"READ_CONTACTS"}, FLOW),
    ("twoDefinitions", 2, {"CAMERA", "INTERNET"}, FLOW),
    ("array", 1, {"READ_CONTACTS", "WRITE_CONTACTS"}, ARRAY),
    ("fromParcel", 1, set(), UNRESOLVED),
    ("fromUri", 1, set(), UNRESOLVED),
])
def test_single_frame(model, method, idx, perms, category):
    r = resolve_permission(model, [(m(method), idx)])
    assert (set(r.permissions), r.category) == (perms, category)
    assert r.resolved == bool(perms)


def test_caller_parameter_of_outermost_frame(model):
    r = resolve_permission(model, [(m("fromCaller", ("String",)), 0)])
    assert r.category == UNRESOLVED and "outermost" in r.reason


DESCENT_STACK = [(m("descent"), 1), (m("relay", ("String",)), 0), (m("enforce", ("String",)), 0)]


def test_parameter_descent(model):
    r = resolve_permission(model, DESCENT_STACK)
    assert r.permissions == {"RECORD_AUDIO"} and r.category == DESCENT and r.descent_depth == 2


@pytest.mark.parametrize("bound,expected", [(0, set()), (1, set()), (2, {"RECORD_AUDIO"}), (None, {"RECORD_AUDIO"})])
def test_descent_bound_never_partial(model, bound, expected):
    r = resolve_permission(model, DESCENT_STACK, max_descent=bound)
    assert set(r.permissions) == expected
    if not expected:
        assert r.category == UNRESOLVED


def test_malformed_stacks(model):
    with pytest.raises(MalformedStack):
        resolve_permission(model, [])
    with pytest.raises(MalformedStack):
        resolve_permission(model, [(m("direct"), 7)])
    with pytest.raises(MalformedStack):
        resolve_permission(model, [(m("descent"), 1), (m("direct"), 0)])
    with pytest.raises(MalformedStack, match="not a permission check"):
        resolve_permission(model, [(m("descent"), 1)])


def test_local_string_values(model):
    assert local_string_values(model.method(m("twoDefinitions")), "x") == {"CAMERA", "INTERNET"}
    assert local_string_values(model.method(m("fromParcel")), "d") is None
    assert local_string_values(model.method(m("relay", ("String",))), "q") is None


def test_fixture_histogram(model):
    pm = analyze(model).map
    hist = classify_resolutions([PermissionResolution(
        (None, 0), r["pep"], frozenset(r["permissions"]), r["category"]) for r in pm.resolutions])
    assert all(hist.by_category[c] >= 1 for c in CATEGORIES)
    assert hist.total == len(pm.resolutions) == hist.found + hist.by_category[UNRESOLVED]
    assert hist.by_count["2"] == 2  # twoDefinitions and array
    assert [label for label, _ in hist.rows()][0] == "total analyses"


@given(st.integers(0, 99))
def test_resolved_permissions_are_declared(i):
    fw = corpus(count=100)[i].framework
    pm = analyze(fw).map
    for r in pm.resolutions:
        assert set(r["permissions"]) <= fw.permissions


@given(st.integers(0, 99), st.integers(0, 3))
def test_descent_bound_monotone(i, bound):
    fw = corpus(count=100)[i].framework
    low = analyze(fw, max_descent=bound).map
    high = analyze(fw, max_descent=bound + 1).map
    for e in low.per_entry:
        assert low.per_entry[e] <= high.per_entry[e]


def test_entry_parameter_tags_entry(model):
    pm = analyze(model).map
    tagged = [u for u in pm.unsound if u["kind"] == "parameter-dependent-entry"]
    assert [u["site"] for u in tagged] == ["<str.Api: void fromCaller(String)>"]
    fc = next(r for r in pm.resolutions if "fromCaller" in r["site"])
    assert fc["category"] == UNRESOLVED and fc["reason"].startswith("value is a parameter of entry point")
