from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from idkg.pipeline import DESK_KGE, DESK_TRAIN, make_model, prepare
from idkg.synthdata import SynthConfig, generate_corpus
from idkg.train import fit

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def desk_corpus():
    return generate_corpus(SynthConfig())


@pytest.fixture(scope="session")
def desk_prep(desk_corpus):
    return prepare(desk_corpus, DESK_KGE)


@pytest.fixture(scope="session")
def desk_model(desk_prep):
    model = make_model(desk_prep, DESK_TRAIN)
    history = fit(model, desk_prep.splits["train"])
    return model, history


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
