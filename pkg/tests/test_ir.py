import pytest
from hypothesis import given, strategies as st

from permlens.corpus import CorpusSpec, generate_framework
from permlens.ir import (
    ClearIdentity, Lit, MethodRef, MethodSig, PBIRError, RestoreIdentity, VirtualCall, entry_points,
    identity_regions, pep_param_index,
)
from permlens.pbir import format_app, format_framework, parse_app, parse_framework, parse_method_ref

from conftest import FRAMEWORK_FIXTURES, load_app, load_fw


def _err(text):
    with pytest.raises(PBIRError) as info:
        parse_framework(text, "t.pbir")
    return info.value.diagnostics[0]


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES)
def test_fixture_round_trip(name):
    fw = load_fw(name)
    again = parse_framework(format_framework(fw))
    assert again == fw
    assert format_framework(again) == format_framework(fw)


@pytest.mark.parametrize("name", ["worked_app", "reflect_app", "undeclared_app", "exact_app"])
def test_app_round_trip(name):
    fw = load_fw("worked")
    app = load_app(name, fw)
    assert parse_app(format_app(app), framework=fw) == app


@given(st.integers(0, 10_000))
def test_generated_round_trip(seed):
    fw = generate_framework(CorpusSpec(seed=seed, count=1), 0)
    assert parse_framework(format_framework(fw)) == fw


def test_method_ref_parse():
    ref = parse_method_ref("<a.B: String get(int,a.C)>")
    assert ref == MethodRef("a.B", MethodSig("get", ("int", "a.C"), "String"))
    assert str(ref) == "<a.B: String get(int,a.C)>"


def test_empty_framework():
    fw = parse_framework('framework "e" {\n}\n')
    assert fw.classes == {} and entry_points(fw) == []


def test_syntax_error_has_position():
    d = _err('framework "x" {\n  class A {\n    method m() {\n      x = = y\n    }\n  }\n}\n')
    assert (d.file, d.line) == ("t.pbir", 4)
    assert "syntax error" in d.message


def test_unresolved_class_reference():
    d = _err('framework "x" {\n  class A extends B {\n  }\n}\n')
    assert "unresolved class reference 'B'" in d.message and d.line == 2


def test_unbalanced_region_rejected():
    d = _err('framework "x" {\n  class A {\n    method m() {\n      clearIdentity\n    }\n  }\n}\n')
    assert "never restored" in d.message


def test_use_before_assignment():
    d = _err('framework "x" {\n  class A {\n    method m() {\n      y = x\n    }\n  }\n}\n')
    assert "'x' used before assignment" in d.message


def test_duplicate_signature():
    d = _err('framework "x" {\n  class A {\n    method m() {\n    }\n    method m() {\n    }\n  }\n}\n')
    assert "duplicate signature" in d.message


def test_lowercase_permission_rejected():
    d = _err('framework "x" {\n  permission camera\n}\n')
    assert "invalid permission" in d.message


def test_undeclared_checked_permission_warns():
    warnings = []
    parse_framework('framework "x" {\n  public class A {\n    public method m() {\n'
                    '      virtualinvoke this <Context: void checkPermission(String)>("NOPE")\n'
                    '    }\n  }\n}\n', "t", warnings)
    assert [w.severity for w in warnings] == ["warning"]


def test_app_declares_unknown_permission():
    with pytest.raises(PBIRError, match="not defined by framework"):
        parse_app('app "a" declares [ZZZ] {\n}\n', framework=load_fw("worked"))


def test_pep_param_index():
    call = VirtualCall(None, "this", parse_method_ref("<Context: void enforcePermission(String,String)>"),
                       (Lit("P"), Lit("msg")))
    assert pep_param_index(call) == 0
    other = VirtualCall(None, "this", parse_method_ref("<Context: void other(String)>"), (Lit("P"),))
    assert pep_param_index(other) is None


def test_identity_regions_nested():
    with pytest.raises(ValueError, match="nested"):
        identity_regions([ClearIdentity(), ClearIdentity(), RestoreIdentity(), RestoreIdentity()])
    assert identity_regions([ClearIdentity(), RestoreIdentity()]) == [(0, 1)]


def test_entry_points_worked(worked):
    assert [e.sig.name for e in entry_points(worked)] == ["e1", "e2", "e3", "e4"]


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES + ("random",))
def test_pta_entries_subset_of_cha(name):
    fw = load_fw(name) if name != "random" else generate_framework(CorpusSpec(seed=3), 0)
    assert set(entry_points(fw, "pta")) <= set(entry_points(fw, "cha"))


def test_entry_points_bad_mode(worked):
    with pytest.raises(ValueError):
        entry_points(worked, "rta")
