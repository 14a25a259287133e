import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecsense.hilbert import SIGMA_MINUS, HilbertLayout, LinearOperator
from ecsense.noise import (MAX_JUMP_PROBABILITY_STEP, ClassicalNoiseTrace, JumpChannel, PhotonRecord,
                           jump_probability, jump_step, sample_noise)

L = HilbertLayout([("q", "qubit")])


def _channel(rate=1.0):
    return JumpChannel(LinearOperator(L, SIGMA_MINUS), rate)


def test_trace_piecewise_constant_and_order_independent():
    a = ClassicalNoiseTrace(0.1, (-1, 1), seed=3)
    b = ClassicalNoiseTrace(0.1, (-1, 1), seed=3)
    forward = [sample_noise(a, t) for t in np.arange(0, 60, 0.05)]
    backward = [sample_noise(b, t) for t in np.arange(0, 60, 0.05)[::-1]][::-1]
    assert forward == backward
    assert sample_noise(a, 0.3) == sample_noise(a, 0.3999)
    assert sample_noise(a, 0.3) == a.value(3)


def test_trace_validation():
    with pytest.raises(ValueError):
        ClassicalNoiseTrace(0.0, (0, 1), 1)
    with pytest.raises(ValueError):
        ClassicalNoiseTrace(1.0, (1, 0), 1)
    with pytest.raises(ValueError):
        sample_noise(ClassicalNoiseTrace(1.0, (0, 1), 1), -1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 5), st.integers(0, 2 ** 32 - 1))
def test_trace_values_in_range(lo, width, seed):
    tr = ClassicalNoiseTrace(0.5, (lo, lo + width), seed)
    vals = [tr.value(k) for k in range(300)]
    assert min(vals) >= lo and max(vals) <= lo + width


def test_jump_rate_statistics():
    ch = _channel(2.0)
    rng = np.random.default_rng(0)
    psi = L.ket("1")
    assert jump_probability(psi, ch, 0.01) == pytest.approx(0.02)
    jumps = sum(jump_step(psi, ch, 0.01, rng)[1] for _ in range(20000))
    assert jumps / 20000 == pytest.approx(0.02, abs=0.004)


def test_jump_step_outputs_and_record():
    ch = _channel(1.0)
    rec = PhotonRecord()

    class Always:
        def random(self):
            return 0.0

    out, jumped = jump_step(L.ket("1"), ch, 0.01, Always(), rec)
    assert jumped and rec["ph"] == 1
    assert abs(out.amplitudes[1]) == pytest.approx(1.0)
    psi = L.superpose([(1, "1"), (1, "0")])

    class Never:
        def random(self):
            return 1.0

    out, jumped = jump_step(psi, ch, 0.01, Never())
    assert not jumped and out.norm() == pytest.approx(1.0)
    assert abs(out.amplitudes[0]) < abs(out.amplitudes[1])


def test_jump_step_guards():
    with pytest.raises(ValueError):
        JumpChannel(LinearOperator(L, SIGMA_MINUS), 0.0)
    with pytest.raises(ValueError):
        jump_step(L.ket("1"), _channel(10.0), 2 * MAX_JUMP_PROBABILITY_STEP, np.random.default_rng())
    with pytest.raises(ValueError):
        PhotonRecord().add("ph", -1)
