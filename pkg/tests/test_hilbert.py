import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecsense.hilbert import (SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Z, HilbertLayout, LayoutError,
                             LinearOperator, QuantumState, create, destroy, embed_factor_operator,
                             evolve_piecewise_constant, fidelity, measure_projective)


@pytest.fixture
def layout():
    return HilbertLayout([("a", "qubit"), ("m", "boson", 3), ("l", "level", ("A", "B", "C"))])


def test_ordering_first_factor_most_significant(layout):
    assert layout.total_dim == 18
    assert layout.index_of(("1", 0, "A")) == 0
    assert layout.index_of(("0", 0, "A")) == 9
    assert layout.index_of(("1", 2, "C")) == 8
    ket = layout.ket("0", 1, "B")
    a = np.array([0, 1]); m = np.array([0, 1, 0]); lv = np.array([0, 1, 0])
    assert np.allclose(ket.amplitudes, np.kron(np.kron(a, m), lv))


def test_qubit_conventions():
    assert np.allclose(SIGMA_MINUS @ np.array([1, 0]), [0, 1])
    assert np.allclose(SIGMA_PLUS, SIGMA_MINUS.conj().T)
    assert np.allclose(SIGMA_Z, SIGMA_PLUS @ SIGMA_MINUS - SIGMA_MINUS @ SIGMA_PLUS)
    a = destroy(4)
    assert np.allclose(np.diag(create(4) @ a), [0, 1, 2, 3])


def test_layout_errors(layout):
    with pytest.raises(LayoutError):
        HilbertLayout([("a", "qubit"), ("a", "qubit")])
    with pytest.raises(LayoutError):
        layout.ket("x", 0, "A")
    with pytest.raises(LayoutError):
        layout.ket("1", 3, "A")
    with pytest.raises(LayoutError):
        embed_factor_operator(layout, "a", np.eye(3))
    with pytest.raises(LayoutError):
        QuantumState(layout, np.zeros(5))


def test_embed_matches_kron(layout):
    op = embed_factor_operator(layout, "m", destroy(3))
    assert np.allclose(op.matrix, np.kron(np.kron(np.eye(2), destroy(3)), np.eye(3)))


def test_evolution_and_validation():
    L = HilbertLayout([("q", "qubit")])
    H = LinearOperator(L, 0.5 * SIGMA_X)
    psi = evolve_piecewise_constant(L.ket("1"), H, np.pi)
    assert fidelity(psi, L.ket("0")) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        evolve_piecewise_constant(L.ket("1"), LinearOperator(L, SIGMA_PLUS), 1.0)
    with pytest.raises(ValueError):
        evolve_piecewise_constant(L.ket("1"), H, -1.0)


def test_measure_projective_born_rule():
    L = HilbertLayout([("q", "qubit")])
    psi = L.superpose([(np.sqrt(0.3), "1"), (np.sqrt(0.7), "0")])
    Z = LinearOperator(L, SIGMA_Z)
    rng = np.random.default_rng(1)
    vals = [measure_projective(psi, Z, rng)[0] for _ in range(4000)]
    assert np.mean(np.array(vals) == 1.0) == pytest.approx(0.3, abs=0.03)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(0, 5))
def test_evolution_preserves_norm(coeffs, t):
    L = HilbertLayout([("a", "qubit"), ("b", "qubit")])
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = LinearOperator(L, M + M.conj().T)
    v = np.array(coeffs, complex) + 1e-3
    psi = QuantumState(L, v / np.linalg.norm(v))
    assert evolve_piecewise_constant(psi, H, t).norm() == pytest.approx(1.0, abs=1e-12)
