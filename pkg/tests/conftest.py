import os
from functools import lru_cache
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from permlens.corpus import CorpusSpec, default_seed, generate_corpus
from permlens.pbir import parse_app, parse_framework

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "permlens" / "fixtures"

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@lru_cache(maxsize=None)
def load_fw(name):
    return parse_framework((FIXTURES / f"{name}.pbir").read_text(), f"{name}.pbir")


def load_app(name, fw=None):
    return parse_app((FIXTURES / f"{name}.pbir").read_text(), f"{name}.pbir", fw)


FRAMEWORK_FIXTURES = ("worked", "binder", "account", "identity", "strings", "gui")


@lru_cache(maxsize=None)
def corpus(seed=None, count=100):
    """Seeded random corpus; ``PERMLENS_SEED`` picks the default seed."""
    seed = default_seed() if seed is None else seed
    return tuple(generate_corpus(CorpusSpec(seed=seed, count=count)))


@pytest.fixture
def worked():
    return load_fw("worked")


# criterion number -> (verdict, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict:<4} {detail}")
