import warnings

import numpy as np
import pytest

from ecsense.codes import ProtocolParams, undetected_leakage, verify_recovery
from ecsense.protocols import (PROTOCOLS, build_protocol, check_protocol, effective_code_hamiltonian,
                               make_shor_like_code)

P = ProtocolParams(g=1.0, nu=0.1, omega=1.0, delta=20.0, gamma=1.0, omega_g=0.5, eta=0.1)


@pytest.fixture(params=sorted(PROTOCOLS))
def spec(request):
    return build_protocol(request.param, P)


def test_initial_state_in_code(spec):
    psi = spec.initial_state.amplitudes
    assert np.vdot(psi, spec.code.projector @ psi).real == pytest.approx(1.0, abs=1e-12)


def test_syndrome_kraus_complete(spec):
    K = spec.syndromes.kraus_operators()
    D = spec.layout.total_dim
    assert np.allclose(sum(k.conj().T @ k for k in K), np.eye(D), atol=1e-12)


def test_error_sets_match_claims(spec):
    for name, rep in check_protocol(spec).items():
        assert rep["matches_expectation"], (spec.name, name)


def test_single_cycle_recovery_branches(spec):
    assert verify_recovery(spec) <= 1e-10


def test_signal_acts_inside_code(spec):
    if spec.name == "eight_qubit_demo":
        pytest.skip("code-only demonstration without a sensing term")
    Heff = effective_code_hamiltonian(spec)
    traceless = Heff - np.trace(Heff) / 2 * np.eye(2)
    assert np.linalg.norm(traceless) > 1e-3


def test_ms_effective_coupling_is_raman_rate():
    Heff = effective_code_hamiltonian(build_protocol("ms", P))
    assert abs(Heff[0, 1]) == pytest.approx(P.g * P.omega / P.delta, rel=1e-6)


def test_unknown_protocol():
    with pytest.raises(KeyError, match="unknown protocol"):
        build_protocol("nope")


def test_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(gamma=-1)
    with pytest.raises(ValueError):
        ProtocolParams(noise_range=(1, 0))
    with pytest.raises(ValueError):
        ProtocolParams(g=float("nan"))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ProtocolParams(omega=1, delta=2).check_raman_ratio()
    assert w


def test_shor_like_leakage_second_order():
    code, clean, no_detection = make_shor_like_code()
    leak = [undetected_leakage(code, no_detection(e), clean) for e in (0.1, 0.05, 0.025)]
    assert leak[0] / leak[1] == pytest.approx(4, rel=0.05)
    assert leak[1] / leak[2] == pytest.approx(4, rel=0.05)
