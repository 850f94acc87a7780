import pytest
from hypothesis import given, strategies as st

from permlens.corpus import CorpusSpec, generate_framework
from permlens.ir import GetService, MethodRef, StaticCall, Transact, VirtualCall, is_synthetic
from permlens.pbir import format_framework
from permlens.pipeline import RewriteOptions, prepare
from permlens.rewrite import (
    empty_methods, generate_entry_drivers, initialize_managers, initialize_services, lift,
    mark_identity_regions, redirect_services,
)

from conftest import FRAMEWORK_FIXTURES, load_fw


def _calls_to(model, cls_prefix):
    return [(ref, s) for ref, m in model.iter_methods() for s in m.body
            if isinstance(s, VirtualCall) and s.method.cls.startswith(cls_prefix)]


def test_redirect_replaces_proxy_calls():
    rf = redirect_services(load_fw("binder"))
    assert not [c for c in _calls_to(rf.model, "svc.S") if c[1].method.cls.endswith("Proxy")]
    assert rf.redirected_sites
    for ref, idx in rf.redirected_sites:
        stmt = rf.model.method(ref).body[idx]
        assert isinstance(stmt, VirtualCall)
        assert isinstance(rf.model.method(ref).body[idx - 1], GetService)
    # transact inside proxies is gone
    for proxy in rf.model.proxies:
        for m in rf.model.classes[proxy].methods.values():
            assert not any(isinstance(s, Transact) for s in m.body)


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES)
def test_redirect_idempotent(name):
    once = redirect_services(load_fw(name))
    twice = redirect_services(once)
    assert twice.model == once.model
    assert twice.redirected_sites == once.redirected_sites


@given(st.integers(0, 5000))
def test_redirect_idempotent_generated(seed):
    once = redirect_services(generate_framework(CorpusSpec(seed=seed, proxies=1, services=2), 0))
    assert redirect_services(once).model == once.model


@pytest.mark.parametrize("name", FRAMEWORK_FIXTURES)
@pytest.mark.parametrize("analysis", ["cha", "pta"])
def test_rewrites_leave_input_untouched(name, analysis):
    fw = load_fw(name)
    before = format_framework(fw)
    prepare(fw, analysis, RewriteOptions(empty=("gui.*",)))
    assert format_framework(fw) == before


def test_identity_regions_recorded():
    rf = mark_identity_regions(load_fw("identity"))
    ref = next(r for r, _ in rf.model.iter_methods() if r.sig.name == "getActiveNetworkInfo")
    assert rf.identity_enabled
    assert rf.in_region(ref, 2) and rf.in_region(ref, 3)
    assert not rf.in_region(ref, 0) and not rf.in_region(ref, 1) and not rf.in_region(ref, 4)


def test_empty_methods_glob():
    rf = empty_methods(load_fw("gui"), ["gui.*"])
    draw = MethodRef("gui.Window", next(iter(rf.model.classes["gui.Window"].methods)))
    assert draw in rf.emptied_methods
    assert len(rf.model.method(draw).body) == 1
    assert "app.Notifier" not in {r.cls for r in rf.emptied_methods}


def test_empty_pattern_matching_nothing_warns():
    rf = empty_methods(load_fw("gui"), ["nothing.*"])
    assert any("matches no class" in d.message for d in rf.diagnostics)


def test_service_init_creates_singletons():
    rf = initialize_services(redirect_services(load_fw("binder")))
    assert set(rf.service_inits) == {"s1", "s2", "s3"}
    main = rf.main_method
    called = {s.method for s in main.body if isinstance(s, StaticCall)}
    assert set(rf.service_inits.values()) <= called


def test_manager_init_registers_factory():
    rf = initialize_managers(initialize_services(load_fw("account")))
    assert "account" in rf.manager_factories
    assert is_synthetic(rf.manager_factories["account"].cls)


def test_drivers_cover_every_entry():
    rf = generate_entry_drivers(lift(load_fw("worked")), "cha")
    main_calls = {s.method for s in rf.main_method.body if isinstance(s, StaticCall)}
    assert set(rf.drivers.values()) <= main_calls
    assert rf.synthetic_main == MethodRef(rf.synthetic_main.cls, rf.synthetic_main.sig)


def test_pipeline_order_recorded():
    rf = prepare(load_fw("account"), "pta")
    assert [r.split(":")[0] for r in rf.rewrites][:3] == ["redirect", "identity", "service-init"]


def test_cha_skips_initialization():
    rf = prepare(load_fw("account"), "cha")
    assert not rf.service_inits and not rf.manager_factories
