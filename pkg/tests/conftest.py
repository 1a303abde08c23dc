import numpy as np
import pytest

from s2srec2.model import ModelConfig, S2SRec2


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=12, d_model=8, num_heads=2, m_ind=3)


@pytest.fixture
def tiny_model(tiny_config):
    return S2SRec2(tiny_config, seed=0)


class ScriptedModel:
    """Stand-in model with a fixed candidate ranking and a scripted p sequence.

    ``p_by_size`` maps basket size to completeness probability; sizes not in
    the map use ``default_p``.
    """

    def __init__(self, vocab_size, p_by_size=None, default_p=0.1, scores=None, max_set_size=15):
        self.vocab_size = vocab_size
        self.p_by_size = p_by_size or {}
        self.default_p = default_p
        self.scores = None if scores is None else np.asarray(scores, dtype=np.float64)
        self.config = type("Cfg", (), {"max_set_size": max_set_size})()
        self.calls = 0

    def infer(self, ids, mask, exclude_inputs=True, exclude=None):
        self.calls += 1
        b = ids.shape[0]
        base = np.ones(self.vocab_size) if self.scores is None else self.scores
        probs = np.tile(base, (b, 1))
        probs[:, 0] = 0.0
        for i in range(b):
            if exclude_inputs:
                probs[i, ids[i][mask[i]]] = 0.0
            if exclude is not None:
                probs[i, list(exclude[i])] = 0.0
        tot = probs.sum(axis=1, keepdims=True)
        probs = np.divide(probs, tot, out=np.zeros_like(probs), where=tot > 0)
        sizes = mask.sum(axis=1)
        p = np.array([self.p_by_size.get(int(s), self.default_p) for s in sizes])
        return probs, p


@pytest.fixture
def scripted():
    return ScriptedModel


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
