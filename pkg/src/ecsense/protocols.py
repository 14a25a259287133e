"""Constructors for every sensing-with-error-correction scheme.

Each ``make_*`` function returns a :class:`~ecsense.codes.ProtocolSpec` with
its code basis, sensing Hamiltonian, error channels and EC cycle. Qubit
levels are written ``1``/``0`` (aliases ``u``/``d``) with the first factor
leftmost, e.g. ``"100"`` is ``|up, 0, 0>``.
"""

from __future__ import annotations

import math
from functools import partial

import numpy as np

from .codes import (
    ClassicalCoupling,
    CodeSpec,
    ErrorSet,
    ProtocolParams,
    ProtocolSpec,
    SyndromeNode,
    SyndromeTable,
    TimeDependentTerm,
    check_correctability,
    complete_unitary,
    verify_recovery,
)
from .hilbert import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    HilbertLayout,
    LinearOperator,
    QuantumState,
    destroy,
    embed_factor_operator,
    embed_many,
)
from .noise import JumpChannel

__all__ = [
    "make_classical_drive_protocol",
    "make_interaction_protocol",
    "make_pulsed_dd_protocol",
    "make_raman_t1_protocol",
    "make_flipflop_protocol",
    "make_ramsey_flipflop_protocol",
    "make_sideband_protocol",
    "make_ms_protocol",
    "make_superradiance_protocol",
    "make_multilevel_protocol",
    "make_both_decay_protocol",
    "make_eight_qubit_demo",
    "make_shor_like_code",
    "make_ghz_decay_case",
    "effective_code_hamiltonian",
    "relative_phase",
    "PROTOCOLS",
    "build_protocol",
    "check_protocol",
]


# -- small helpers -------------------------------------------------------------

def _op(layout, label, local) -> LinearOperator:
    return embed_factor_operator(layout, label, local)


def _outer(a: QuantumState, b: QuantumState) -> np.ndarray:
    return np.outer(a.amplitudes, b.amplitudes.conj())


def _zero(layout) -> LinearOperator:
    n = layout.total_dim
    return LinearOperator(layout, np.zeros((n, n), dtype=complex), is_hermitian=True)


def _labelled_observable(layout, groups: dict[float, list[QuantumState]]) -> LinearOperator:
    """``sum_k lambda_k P_k`` with ``P_k`` the projector onto the span of the
    listed (orthonormal) states; everything else gets eigenvalue 0."""
    n = layout.total_dim
    M = np.zeros((n, n), dtype=complex)
    for val, states in groups.items():
        if val == 0:
            raise ValueError("eigenvalue 0 is reserved for the unlisted complement")
        for s in states:
            M += val * _outer(s, s)
    return LinearOperator(layout, M, is_hermitian=True)


def _diagonal_observable(layout, label_fn) -> LinearOperator:
    """Observable diagonal in the product basis, eigenvalue ``label_fn(levels)``
    where ``levels`` holds the per-factor level index of a basis state."""
    idx = np.array(list(np.ndindex(*layout.dims)))
    vals = np.array([float(label_fn(tuple(row))) for row in idx])
    return LinearOperator(layout, np.diag(vals).astype(complex), is_hermitian=True)


def _jump(layout, label, local, rate, photon="ph"):
    return JumpChannel(_op(layout, label, local), rate, photon)


def _maybe_jump(layout, label, local, rate, photon="ph"):
    return [_jump(layout, label, local, rate, photon)] if rate > 0 else []


def _good_term(layout, label, nu) -> LinearOperator:
    """``(nu/2)(|1><1| - |0><0|)`` on a good qubit."""
    return _op(layout, label, 0.5 * nu * SIGMA_Z)


def _flipflop(layout, a, b) -> LinearOperator:
    """``sigma_+^a sigma_-^b + h.c.``"""
    m = embed_many(layout, {a: SIGMA_PLUS, b: SIGMA_MINUS}).matrix
    return LinearOperator(layout, m + m.conj().T, is_hermitian=True)


def _lambda_hamiltonian(layout, A, B, C, g1, g2, detuning) -> LinearOperator:
    """``g1|B><A| + g2|B><C| + h.c. + detuning |B><B|``."""
    M = g1 * _outer(B, A) + g2 * _outer(B, C)
    M = M + M.conj().T + detuning * _outer(B, B)
    return LinearOperator(layout, M, is_hermitian=True)


def _dressed_pair(H: LinearOperator, A, B, C) -> tuple[QuantumState, QuantumState]:
    """Images of ``A`` and ``C`` in the two eigenstates of the three-level
    Raman block with the least utility weight, symmetrically orthonormalized."""
    W = np.stack([A.amplitudes, B.amplitudes, C.amplitudes], axis=1)
    h = W.conj().T @ H.matrix @ W
    _, vecs = np.linalg.eigh(h)
    keep = np.argsort(np.abs(vecs[1, :]))[:2]
    Pd = vecs[:, keep] @ vecs[:, keep].conj().T
    M = Pd[:, [0, 2]]
    w, U = np.linalg.eigh(M.conj().T @ M)
    M = M @ (U * w ** -0.5) @ U.conj().T
    out = W @ M
    return QuantumState(A.layout, out[:, 0]), QuantumState(A.layout, out[:, 1])


def _table(node: SyndromeNode, name: str) -> SyndromeTable:
    return SyndromeTable(node, name)


def _finish(spec: ProtocolSpec, verify: bool = True) -> ProtocolSpec:
    if verify:
        verify_recovery(spec, tol=1e-9)
    return spec


# -- reference signals (module level so specs stay picklable) ------------------

def _cos2_reference(freq, t):
    return math.cos(0.5 * freq * t) ** 2


def _sin2_reference(freq, t):
    return math.sin(0.5 * freq * t) ** 2


def _dd_phase_reference(g, t):
    return 2.0 * g * t / math.pi


def _lambda_transfer_reference(g1, g2, detuning, t):
    """Population of the target state under the adiabatically eliminated
    three-level Raman coupling."""
    c = g1 * g2 / detuning
    d = (g2 ** 2 - g1 ** 2) / detuning
    w = math.hypot(2 * c, d)
    if w == 0:
        return 0.0
    return (2 * c / w) ** 2 * math.sin(0.5 * w * t) ** 2


def _ramsey_reference(delta, t):
    return math.cos(0.5 * delta * t) ** 2


def _population_signal(vec, amps, t):
    return np.abs(amps @ vec.conj()) ** 2


def _ramsey_signal(a_vec, c_vec, omega_drive, amps, t):
    """``|C>`` population after a virtual closing pi/2 pulse with drive phase
    ``omega_drive * t``."""
    a = amps @ a_vec.conj()
    c = amps @ c_vec.conj()
    phi = omega_drive * t
    s = math.sqrt(0.5)
    # closing pulse exp(-i pi/4 (e^{-i phi}|A><C| + e^{i phi}|C><A|)) projected on <C|
    c_out = -1j * s * np.exp(1j * phi) * a + s * c
    return np.abs(c_out) ** 2


def _cos_antiderivative(amplitude, omega0, t):
    return amplitude * math.sin(omega0 * t) / omega0


def relative_phase(state: QuantumState, first: QuantumState, second: QuantumState) -> float:
    """``arg(<second|psi>) - arg(<first|psi>)`` wrapped to (-pi, pi]."""
    a = first.overlap(state)
    b = second.overlap(state)
    return float(np.angle(b * np.conj(a)))


def effective_code_hamiltonian(spec: ProtocolSpec) -> np.ndarray:
    """Code-block Hamiltonian, including the second-order Raman coupling
    through the utility states (Schur complement at zero energy)."""
    V = spec.code.basis
    H = spec.sensing_hamiltonian.matrix
    h = V.conj().T @ H @ V
    if spec.code.utility_states:
        U = np.stack([u.amplitudes for u in spec.code.utility_states.values()], axis=1)
        hpq = V.conj().T @ H @ U
        hqq = U.conj().T @ H @ U
        h = h - hpq @ np.linalg.solve(hqq, hpq.conj().T)
    return 0.5 * (h + h.conj().T)


# -- classical drive noise ---------------------------------------------------

def _classical_layout():
    return HilbertLayout([("s", "qubit"), ("good", "qubit")])


def _sigma_table(L, code, err, correction, name="Sigma_z"):
    obs = _labelled_observable(L, {1.0: code, -1.0: err})
    return _table(SyndromeNode(obs, {-1.0: correction}, name), name)


def make_classical_drive_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Sensing qubit paired with a good qubit, code ``{|d0>, |u1>}``.

    Signal ``(g/2) sigma_z`` on the sensing qubit, good-qubit gap ``nu`` and a
    classical bit-flip noise ``f(t) sigma_x`` on the sensing qubit; the EC
    cycle measures ``P_code - P_err`` and flips the sensing qubit on ``-1``.
    """
    L = _classical_layout()
    c0, c1 = L.ket("d0"), L.ket("u1")
    e0, e1 = L.ket("u0"), L.ket("d1")
    code = CodeSpec(L, {"d0": c0, "u1": c1})
    sz = _op(L, "s", SIGMA_Z)
    sx = LinearOperator(L, _op(L, "s", SIGMA_X).matrix, is_unitary=True)
    H = sz * (0.5 * params.g) + _good_term(L, "good", params.nu)
    channels = []
    if params.noise_range != (0.0, 0.0):
        channels.append(ClassicalCoupling(sx, params.noise_range, "f_x",
                                          params.extra.get("noise_interval")))
    freq = params.g + params.nu
    return _finish(ProtocolSpec(
        name="classical_drive", code=code, sensing_hamiltonian=H, params=params,
        initial_state=code.state([1, 1]), error_channels=channels,
        syndromes=_sigma_table(L, [c0, c1], [e0, e1], sx),
        ideal_reference=partial(_cos2_reference, freq),
        error_sets={"bit_flip": ErrorSet({"sigma_x[s]": sx})},
        recoverable_errors=[sx], reference_frequency=abs(freq),
    ))


def make_interaction_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Two sensing qubits coupled by the signal plus a good qubit.

    ``H = (g/2)(s+1 s-2 + h.c.) + (nu/2) sigma_z[good]``; each sensing qubit
    dephases under its own classical trace ``f_j(t) sigma_z^j``.
    """
    L = HilbertLayout([("s1", "qubit"), ("s2", "qubit"), ("good", "qubit")])
    sq = math.sqrt(0.5)
    c0 = L.superpose([(sq, "010"), (-sq, "100")])
    c1 = L.superpose([(sq, "011"), (sq, "101")])
    e0 = L.superpose([(sq, "010"), (sq, "100")])
    e1 = L.superpose([(sq, "011"), (-sq, "101")])
    code = CodeSpec(L, {"c0": c0, "c1": c1})
    H = _flipflop(L, "s1", "s2") * (0.5 * params.g) + _good_term(L, "good", params.nu)
    z1, z2 = _op(L, "s1", SIGMA_Z), _op(L, "s2", SIGMA_Z)
    channels = []
    if params.noise_range != (0.0, 0.0):
        interval = params.extra.get("noise_interval")
        channels = [ClassicalCoupling(z1, params.noise_range, "f_1", interval),
                    ClassicalCoupling(z2, params.noise_range, "f_2", interval)]
    U = complete_unitary(L, [(e0, c0), (e1, c1)])
    freq = params.g + params.nu
    return _finish(ProtocolSpec(
        name="interaction", code=code, sensing_hamiltonian=H, params=params,
        initial_state=code.state([1, 1]), error_channels=channels,
        syndromes=_sigma_table(L, [c0, c1], [e0, e1], U),
        ideal_reference=partial(_cos2_reference, freq),
        error_sets={"dephasing": ErrorSet({"sigma_z[s1]": z1, "sigma_z[s2]": z2})},
        recoverable_errors=[z1, z2], reference_frequency=abs(freq),
    ))


def make_pulsed_dd_protocol(params: ProtocolParams, tau: float | None = None) -> ProtocolSpec:
    """Classical-drive code under an oscillating signal with a pi-pulse train.

    Signal ``(g/2) cos(omega0 t) sigma_z`` with ``omega0 = pi/tau``; the pulse
    ``sigma_x (x) sigma_x`` swaps the two code states at ``(k + 1/2) tau``, so
    the arms accumulate ``-+ (g/pi) t`` and a static ``sigma_z`` offset is
    echoed away. Noise: ``f_x sigma_x`` (range ``noise_range``) and
    ``f_z sigma_z`` (range ``extra['fz_range']``, resampled every
    ``extra['fz_interval']``, default the whole run).
    """
    if tau is None:
        tau = params.extra.get("tau", math.pi / params.extra.get("omega0", 10.0 * max(abs(params.g), 1e-12)))
    if not tau > 0:
        raise ValueError("tau must be positive")
    omega0 = math.pi / tau
    L = _classical_layout()
    c0, c1 = L.ket("d0"), L.ket("u1")
    e0, e1 = L.ket("u0"), L.ket("d1")
    code = CodeSpec(L, {"d0": c0, "u1": c1})
    sz = _op(L, "s", SIGMA_Z)
    sx = LinearOperator(L, _op(L, "s", SIGMA_X).matrix, is_unitary=True)
    H0 = _good_term(L, "good", params.nu)
    td = [TimeDependentTerm(sz, partial(_cos_antiderivative, 0.5 * params.g, omega0))]
    pulse = LinearOperator(L, embed_many(L, {"s": SIGMA_X, "good": SIGMA_X}).matrix, is_unitary=True)
    channels = []
    if params.noise_range != (0.0, 0.0):
        channels.append(ClassicalCoupling(sx, params.noise_range, "f_x",
                                          params.extra.get("noise_interval")))
    fz = tuple(params.extra.get("fz_range", (0.0, 0.0)))
    if fz != (0.0, 0.0):
        channels.append(ClassicalCoupling(sz, fz, "f_z", params.extra.get("fz_interval", 1e300)))
    return _finish(ProtocolSpec(
        name="pulsed_dd", code=code, sensing_hamiltonian=H0, params=params,
        initial_state=code.state([1, 1]), error_channels=channels,
        syndromes=_sigma_table(L, [c0, c1], [e0, e1], sx),
        ideal_reference=partial(_dd_phase_reference, params.g),
        time_dependent=td, dd_unitary=pulse, dd_period=tau, dd_offset=0.5 * tau,
        error_sets={"bit_flip": ErrorSet({"sigma_x[s]": sx}),
                    "dephasing": ErrorSet({"sigma_z[s]": sz}, expect_correctable=False)},
        recoverable_errors=[sx], notes={"tau": tau, "omega0": omega0},
    ))


# -- decay-protected schemes with a lossy qubit -------------------------------

def make_raman_t1_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Three-qubit Raman scheme: lossy qubit ``q0``, good qubits ``q1``, ``lab``.

    Code ``A = (|00>+|11>)|0>``, ``C = (|00>-|11>)|1>`` with utility
    ``B = (|00>-|11>)|0>`` and ``H = g|B><A| + omega|B><C| + h.c. + delta|B><B|``.
    The EC cycle measures ``S_z^0 S_z^1`` and, on the even outcome, ``S_z^0``
    before re-encoding. With ``extra['dressed']`` the re-encoding targets
    are the dressed images of ``A``/``C`` (utility admixture kept adiabatic)
    instead of the bare code states.
    """
    params.check_raman_ratio()
    L = HilbertLayout([("q0", "qubit"), ("q1", "qubit"), ("lab", "qubit")])
    sq = math.sqrt(0.5)
    A = L.superpose([(sq, "000"), (sq, "110")])
    C = L.superpose([(sq, "001"), (-sq, "111")])
    B = L.superpose([(sq, "000"), (-sq, "110")])
    code = CodeSpec(L, {"A": A, "C": C}, {"B": B})
    H = _lambda_hamiltonian(L, A, B, C, params.g, params.omega, params.delta)
    dressed = bool(params.extra.get("dressed", False))
    tA, tC = _dressed_pair(H, A, B, C) if dressed else (A, C)
    k = L.ket
    zz = LinearOperator(L, embed_many(L, {"q0": SIGMA_Z, "q1": SIGMA_Z}).matrix, is_hermitian=True)
    z0 = _op(L, "q0", SIGMA_Z)
    U_q0_low = complete_unitary(L, [(k("000"), tA), (k("001"), tC)])
    U_q0_high = complete_unitary(L, [(k("110"), tA), (k("111"), tC * -1)])
    U_odd = complete_unitary(L, [(k("010"), tA), (k("011"), tC * -1)])
    inner = SyndromeNode(z0, {-1.0: U_q0_low, 1.0: U_q0_high}, "S_z^0")
    table = _table(SyndromeNode(zz, {1.0: inner, -1.0: U_odd}, "S_z^0 S_z^1"), "raman")
    sm = _op(L, "q0", SIGMA_MINUS)
    n0 = _op(L, "q0", SIGMA_PLUS @ SIGMA_MINUS)
    init = params.extra.get("initial", [1.0, 0.0])
    psi0 = QuantumState(L, np.stack([tA.amplitudes, tC.amplitudes], 1) @ np.asarray(init, complex)).normalize()
    spec = ProtocolSpec(
        name="raman_t1", code=code, sensing_hamiltonian=H, params=params,
        initial_state=psi0, error_channels=_maybe_jump(L, "q0", SIGMA_MINUS, params.gamma),
        syndromes=table,
        ideal_reference=partial(_lambda_transfer_reference, params.g, params.omega, params.delta),
        signal=partial(_population_signal, C.amplitudes),
        error_sets={"decay": ErrorSet({"sigma_-[q0]": sm})},
        recoverable_errors=[sm, n0],
        reference_frequency=(params.g ** 2 + params.omega ** 2) / abs(params.delta) if params.delta else 0.0,
        notes={"epsilon": params.epsilon, "dressed": dressed,
               "beta_state": A.amplitudes, "omega_eff": params.g * params.omega / params.delta
               if params.delta else 0.0},
    )
    return _finish(spec, verify=not dressed)


def _flipflop_code(L, names=("q0", "q1", "q2"), suffix=""):
    sq = math.sqrt(0.5)
    A = L.superpose([(sq, "100" + suffix), (sq, "011" + suffix)])
    C = L.superpose([(sq, "010" + suffix), (sq, "101" + suffix)])
    return A, C


def make_flipflop_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Lossy ``q0`` flip-flop coupled to ``q1`` by the signal, label ``q2``.

    Code ``A = (|100>+|011>)/sqrt2``, ``C = (|010>+|101>)/sqrt2`` and
    ``H = g(s+0 s-1 + h.c.)`` rotates ``A <-> C`` directly. The EC cycle
    measures ``S_z^0 S_z^1``; the even outcome flags a decay, the odd one is
    followed by ``S_z^1``; each branch is re-encoded by a single unitary.
    """
    L = HilbertLayout([("q0", "qubit"), ("q1", "qubit"), ("q2", "qubit")])
    A, C = _flipflop_code(L)
    code = CodeSpec(L, {"A": A, "C": C})
    H = _flipflop(L, "q0", "q1") * params.g
    k = L.ket
    zz = LinearOperator(L, embed_many(L, {"q0": SIGMA_Z, "q1": SIGMA_Z}).matrix, is_hermitian=True)
    z1 = _op(L, "q1", SIGMA_Z)
    U_jump = complete_unitary(L, [(k("000"), A), (k("001"), C)])
    U_hi = complete_unitary(L, [(k("011"), A), (k("010"), C)])
    U_lo = complete_unitary(L, [(k("100"), A), (k("101"), C)])
    inner = SyndromeNode(z1, {1.0: U_hi, -1.0: U_lo}, "S_z^1")
    table = _table(SyndromeNode(zz, {1.0: U_jump, -1.0: inner}, "S_z^0 S_z^1"), "flipflop")
    sm = _op(L, "q0", SIGMA_MINUS)
    n0 = _op(L, "q0", SIGMA_PLUS @ SIGMA_MINUS)
    return _finish(ProtocolSpec(
        name="flipflop", code=code, sensing_hamiltonian=H, params=params,
        initial_state=A, error_channels=_maybe_jump(L, "q0", SIGMA_MINUS, params.gamma),
        syndromes=table, ideal_reference=partial(_sin2_reference, 2 * params.g),
        signal=partial(_population_signal, C.amplitudes),
        error_sets={"decay": ErrorSet({"sigma_-[q0]": sm})},
        recoverable_errors=[sm, n0], reference_frequency=abs(2 * params.g),
    ))


def make_ramsey_flipflop_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Ramsey variant: the signal is the code gap, read out by pi/2 pulses.

    Lossy ``q0``, good ``q1`` and auxiliary ``q2``; code
    ``A = (|u,0>+|d,1>)|1>``, ``C = (|u,0>-|d,1>)|0>`` and
    ``H = (omega/2)(s-0 s+1 + h.c.) + (nu/2) sigma_z[q2]`` so the code gap is
    ``omega + nu``. The opening pulse is folded into the initial state and the
    closing pulse (drive frequency ``omega + nu + delta``) is applied
    virtually when the signal is recorded. EC: local ``S_z^0`` and ``S_z^1``.
    """
    L = HilbertLayout([("q0", "qubit"), ("q1", "qubit"), ("q2", "qubit")])
    sq = math.sqrt(0.5)
    A = L.superpose([(sq, "101"), (sq, "011")])
    C = L.superpose([(sq, "100"), (-sq, "010")])
    code = CodeSpec(L, {"A": A, "C": C})
    H = _flipflop(L, "q0", "q1") * (0.5 * params.omega) + _good_term(L, "q2", params.nu)
    k = L.ket
    obs = LinearOperator(L, _op(L, "q0", SIGMA_Z).matrix + 2 * _op(L, "q1", SIGMA_Z).matrix,
                         is_hermitian=True)
    U_u0 = complete_unitary(L, [(k("101"), A), (k("100"), C)])
    U_d1 = complete_unitary(L, [(k("011"), A), (k("010"), C * -1)])
    U_d0 = complete_unitary(L, [(k("001"), A), (k("000"), C)])
    table = _table(SyndromeNode(obs, {-1.0: U_u0, 1.0: U_d1, -3.0: U_d0}, "S_z^0, S_z^1"),
                   "ramsey_flipflop")
    sm = _op(L, "q0", SIGMA_MINUS)
    n0 = _op(L, "q0", SIGMA_PLUS @ SIGMA_MINUS)
    drive = params.omega + params.nu + params.delta
    return _finish(ProtocolSpec(
        name="ramsey_flipflop", code=code, sensing_hamiltonian=H, params=params,
        initial_state=code.state([1, -1j]),
        error_channels=_maybe_jump(L, "q0", SIGMA_MINUS, params.gamma), syndromes=table,
        ideal_reference=partial(_ramsey_reference, params.delta),
        signal=partial(_ramsey_signal, A.amplitudes, C.amplitudes, drive),
        error_sets={"decay": ErrorSet({"sigma_-[q0]": sm})},
        recoverable_errors=[sm, n0], reference_frequency=abs(params.omega + params.nu),
        notes={"drive_frequency": drive},
    ))


def make_sideband_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Flip-flop code with a motional mode in place of the partner qubit.

    Layout ``s (x) vib(2) (x) good``; ``H = eta*omega (s- a^dag + s+ a)``.
    Spin decay at ``gamma`` is corrected; phonon loss (``extra['phonon_gamma']``)
    is not, and flips the logical state.
    """
    dim = int(params.extra.get("boson_dim", 2))
    if dim < 2:
        raise ValueError("boson factor needs dim >= 2")
    if dim != 2:
        raise ValueError("the sideband code is defined on the {0, 1} phonon manifold; use boson_dim=2")
    L = HilbertLayout([("s", "qubit"), ("vib", "boson", dim), ("good", "qubit")])
    A, C = _flipflop_code(L)
    code = CodeSpec(L, {"A": A, "C": C})
    a = destroy(dim)
    m = embed_many(L, {"s": SIGMA_MINUS, "vib": a.conj().T}).matrix
    H = LinearOperator(L, params.eta * params.omega * (m + m.conj().T), is_hermitian=True)
    k = L.ket
    zv = np.diag([-1.0, 1.0]).astype(complex)     # n=1 plays the partner's |1>
    zz = LinearOperator(L, embed_many(L, {"s": SIGMA_Z, "vib": zv}).matrix, is_hermitian=True)
    z1 = _op(L, "vib", zv)
    U_jump = complete_unitary(L, [(k("000"), A), (k("001"), C)])
    U_hi = complete_unitary(L, [(k("011"), A), (k("010"), C)])
    U_lo = complete_unitary(L, [(k("100"), A), (k("101"), C)])
    inner = SyndromeNode(z1, {1.0: U_hi, -1.0: U_lo}, "Z_vib")
    table = _table(SyndromeNode(zz, {1.0: U_jump, -1.0: inner}, "S_z Z_vib"), "sideband")
    sm = _op(L, "s", SIGMA_MINUS)
    n0 = _op(L, "s", SIGMA_PLUS @ SIGMA_MINUS)
    av = _op(L, "vib", a)
    channels = _maybe_jump(L, "s", SIGMA_MINUS, params.gamma)
    ph_rate = float(params.extra.get("phonon_gamma", 0.0))
    if ph_rate > 0:
        channels.append(JumpChannel(av, ph_rate, "phonon"))
    freq = 2 * params.eta * params.omega
    return _finish(ProtocolSpec(
        name="sideband", code=code, sensing_hamiltonian=H, params=params,
        initial_state=A, error_channels=channels, syndromes=table,
        ideal_reference=partial(_sin2_reference, freq),
        signal=partial(_population_signal, C.amplitudes),
        error_sets={"spin_decay": ErrorSet({"sigma_-[s]": sm}),
                    "phonon_loss": ErrorSet({"a[vib]": av}),
                    "spin_and_phonon": ErrorSet({"sigma_-[s]": sm, "a[vib]": av},
                                                expect_correctable=False)},
        recoverable_errors=[sm, n0], reference_frequency=abs(freq),
    ))


def make_ms_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Flip-flop code on three ions plus a motional mode, driven as a Raman
    transition ``A <-> C`` through ``B = (|d00>+|d01>)|1_vib>``.

    ``H = g|B><A| + omega|B><C| + h.c. + delta|B><B|``. The EC instrument
    has three outcomes: the decayed span ``{|d00>, |d01>}|0>`` (re-encoded to
    bare ``A``, ``C``), the span reached by no-jump back-action (fixed by
    ``sigma_z`` on the lossy ion) and everything else, which is left alone so
    the utility amplitude survives cycles without decays.
    """
    eps = params.check_raman_ratio()
    L = HilbertLayout([("q0", "qubit"), ("q1", "qubit"), ("q2", "qubit"), ("vib", "boson", 2)])
    sq = math.sqrt(0.5)
    A, C = _flipflop_code(L, suffix="0")
    B = L.superpose([(sq, "0001"), (sq, "0011")])
    Aperp = L.superpose([(sq, "1000"), (-sq, "0110")])
    Cperp = L.superpose([(sq, "0100"), (-sq, "1010")])
    code = CodeSpec(L, {"A": A, "C": C}, {"B": B})
    H = _lambda_hamiltonian(L, A, B, C, params.g, params.omega, params.delta)
    k = L.ket
    j0, j1 = k("0000"), k("0010")
    obs = _labelled_observable(L, {2.0: [j0, j1], -1.0: [Aperp, Cperp]})
    U_jump = complete_unitary(L, [(j0, A), (j1, C)])
    z0 = LinearOperator(L, _op(L, "q0", SIGMA_Z).matrix, is_unitary=True)
    table = _table(SyndromeNode(obs, {2.0: U_jump, -1.0: z0}, "decay / back-action / rest"), "ms")
    sm = _op(L, "q0", SIGMA_MINUS)
    n0 = _op(L, "q0", SIGMA_PLUS @ SIGMA_MINUS)
    init = params.extra.get("initial", [1.0, 0.0])
    return _finish(ProtocolSpec(
        name="ms", code=code, sensing_hamiltonian=H, params=params,
        initial_state=code.state(init),
        error_channels=_maybe_jump(L, "q0", SIGMA_MINUS, params.gamma), syndromes=table,
        ideal_reference=partial(_lambda_transfer_reference, params.g, params.omega, params.delta),
        signal=partial(_population_signal, C.amplitudes),
        error_sets={"decay": ErrorSet({"sigma_-[q0]": sm})},
        recoverable_errors=[sm, n0],
        reference_frequency=(params.g ** 2 + params.omega ** 2) / abs(params.delta) if params.delta else 0.0,
        notes={"epsilon": eps, "omega_eff": params.g * params.omega / params.delta
               if params.delta else 0.0},
    ))


# -- collective and multilevel decay -------------------------------------------

def make_superradiance_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Two emitters decaying collectively through ``s-^0 + s-^1``, good ``q2``.

    Code ``A = |111>``, ``B = (|010>+|100>)/sqrt2``. Both code states decay at
    twice the single-emitter rate, so the no-jump branch leaves the logical
    amplitudes untouched. ``H = g(sz0 + sz1) + g(s+0 s-1 + h.c.) +
    (omega_g/2) sz2`` gives the code gap ``g + omega_g``.
    """
    L = HilbertLayout([("q0", "qubit"), ("q1", "qubit"), ("q2", "qubit")])
    sq = math.sqrt(0.5)
    A = L.ket("111")
    B = L.superpose([(sq, "010"), (sq, "100")])
    code = CodeSpec(L, {"A": A, "B": B})
    g = params.g
    H = (_op(L, "q0", SIGMA_Z) + _op(L, "q1", SIGMA_Z)) * g + _flipflop(L, "q0", "q1") * g \
        + _good_term(L, "q2", params.omega_g)
    J = _op(L, "q0", SIGMA_MINUS) + _op(L, "q1", SIGMA_MINUS)
    zzz = LinearOperator(L, embed_many(L, {"q0": SIGMA_Z, "q1": SIGMA_Z, "q2": SIGMA_Z}).matrix,
                         is_hermitian=True)
    S = L.superpose([(sq, "101"), (sq, "011")])
    U = complete_unitary(L, [(S, A), (L.ket("000"), B)])
    table = _table(SyndromeNode(zzz, {-1.0: U}, "s_z^0 s_z^1 s_z^2"), "superradiance")
    channels = [JumpChannel(J, params.gamma, "ph")] if params.gamma > 0 else []
    freq = g + params.omega_g
    return _finish(ProtocolSpec(
        name="superradiance", code=code, sensing_hamiltonian=H, params=params,
        initial_state=code.state([1, 1]), error_channels=channels, syndromes=table,
        ideal_reference=partial(_cos2_reference, freq),
        error_sets={"collective_decay": ErrorSet({"s-0 + s-1": J})},
        recoverable_errors=[J, J.dag @ J], reference_frequency=abs(freq),
    ))


def _two_level_rotation(L, c1, c2, g):
    M = g * (_outer(c1, c2) + _outer(c2, c1))
    return LinearOperator(L, M, is_hermitian=True)


def _level_op(L, label, target, source):
    f = L.factors[L.position(label)]
    m = np.zeros((f.dim, f.dim), dtype=complex)
    m[f.level_index(target), f.level_index(source)] = 1.0
    return _op(L, label, m)


def _level_projector(L, label, names):
    f = L.factors[L.position(label)]
    m = np.zeros((f.dim, f.dim), dtype=complex)
    for n in names:
        m[f.level_index(n), f.level_index(n)] = 1.0
    return _op(L, label, m).matrix


def make_multilevel_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Two atoms with levels ``{1, 0}`` (J=2 manifold) decaying to ``u`` and
    ``d`` (J=1 manifold) through four distinguishable photon channels A-D.

    Code ``(|11>+|00>)/sqrt2``, ``(|01>+|10>)/sqrt2`` with
    ``H = g(|c1><c2| + h.c.)``. EC: measure which atom left the J=2 manifold,
    then its ``m`` level, and re-encode.
    """
    levels = ("1", "0", "u", "d")
    L = HilbertLayout([("a1", "level", levels), ("a2", "level", levels)])
    sq = math.sqrt(0.5)
    c1 = L.superpose([(sq, "11"), (sq, "00")])
    c2 = L.superpose([(sq, "01"), (sq, "10")])
    code = CodeSpec(L, {"c1": c1, "c2": c2})
    H = _two_level_rotation(L, c1, c2, params.g)
    ops = {"A": _level_op(L, "a1", "u", "1"), "B": _level_op(L, "a1", "d", "0"),
           "C": _level_op(L, "a2", "u", "1"), "D": _level_op(L, "a2", "d", "0")}
    k = L.ket
    Jobs = LinearOperator(L, _level_projector(L, "a1", "ud") + 2 * _level_projector(L, "a2", "ud"),
                          is_hermitian=True)
    m1 = LinearOperator(L, _level_projector(L, "a1", "u") - _level_projector(L, "a1", "d"),
                        is_hermitian=True)
    m2 = LinearOperator(L, _level_projector(L, "a2", "u") - _level_projector(L, "a2", "d"),
                        is_hermitian=True)
    n1 = SyndromeNode(m1, {1.0: complete_unitary(L, [(k("u1"), c1), (k("u0"), c2)]),
                           -1.0: complete_unitary(L, [(k("d0"), c1), (k("d1"), c2)])}, "m[a1]")
    n2 = SyndromeNode(m2, {1.0: complete_unitary(L, [(k("1u"), c1), (k("0u"), c2)]),
                           -1.0: complete_unitary(L, [(k("0d"), c1), (k("1d"), c2)])}, "m[a2]")
    table = _table(SyndromeNode(Jobs, {1.0: n1, 2.0: n2}, "J[a1], J[a2]"), "multilevel")
    channels = [JumpChannel(op, params.gamma, lab) for lab, op in ops.items()] if params.gamma > 0 else []
    return _finish(ProtocolSpec(
        name="multilevel", code=code, sensing_hamiltonian=H, params=params,
        initial_state=c1, error_channels=channels, syndromes=table,
        ideal_reference=partial(_sin2_reference, 2 * params.g),
        signal=partial(_population_signal, c2.amplitudes),
        error_sets={"decay": ErrorSet(ops)}, recoverable_errors=list(ops.values()),
        reference_frequency=abs(2 * params.g),
    ))


def make_both_decay_protocol(params: ProtocolParams) -> ProtocolSpec:
    """Two J=1 atoms whose ``1`` and ``0`` levels both decay to ``!``, plus a
    good qubit.

    Code ``(|10u>+|01d>)/sqrt2``, ``(|01u>+|10d>)/sqrt2`` with
    ``H = g(|10><01| + h.c.)`` on the atoms. EC: measure which atom decayed,
    then the ``m`` level of the other one, and re-encode.
    """
    levels = ("1", "0", "!")
    L = HilbertLayout([("a1", "level", levels), ("a2", "level", levels), ("good", "qubit")])
    sq = math.sqrt(0.5)
    c1 = L.superpose([(sq, "10u"), (sq, "01d")])
    c2 = L.superpose([(sq, "01u"), (sq, "10d")])
    code = CodeSpec(L, {"c1": c1, "c2": c2})
    flip = embed_many(L, {"a1": _level_local(3, 0, 1), "a2": _level_local(3, 1, 0)}).matrix
    H = LinearOperator(L, params.g * (flip + flip.conj().T), is_hermitian=True)
    ops = {"A": _level_op(L, "a1", "!", "1"), "B": _level_op(L, "a1", "!", "0"),
           "C": _level_op(L, "a2", "!", "1"), "D": _level_op(L, "a2", "!", "0")}
    k = L.ket
    Jobs = LinearOperator(L, _level_projector(L, "a1", "!") + 2 * _level_projector(L, "a2", "!"),
                          is_hermitian=True)
    m1 = LinearOperator(L, _level_projector(L, "a1", "1") - _level_projector(L, "a1", "0"),
                        is_hermitian=True)
    m2 = LinearOperator(L, _level_projector(L, "a2", "1") - _level_projector(L, "a2", "0"),
                        is_hermitian=True)
    # atom 1 decayed: the partner's m tells which level it left from
    n_a1 = SyndromeNode(m2, {-1.0: complete_unitary(L, [(k("!0u"), c1), (k("!0d"), c2)]),
                             1.0: complete_unitary(L, [(k("!1d"), c1), (k("!1u"), c2)])}, "m[a2]")
    n_a2 = SyndromeNode(m1, {-1.0: complete_unitary(L, [(k("0!d"), c1), (k("0!u"), c2)]),
                             1.0: complete_unitary(L, [(k("1!u"), c1), (k("1!d"), c2)])}, "m[a1]")
    table = _table(SyndromeNode(Jobs, {1.0: n_a1, 2.0: n_a2}, "J[a1], J[a2]"), "both_decay")
    channels = [JumpChannel(op, params.gamma, lab) for lab, op in ops.items()] if params.gamma > 0 else []
    return _finish(ProtocolSpec(
        name="both_decay", code=code, sensing_hamiltonian=H, params=params,
        initial_state=c1, error_channels=channels, syndromes=table,
        ideal_reference=partial(_sin2_reference, 2 * params.g),
        signal=partial(_population_signal, c2.amplitudes),
        error_sets={"decay": ErrorSet(ops)}, recoverable_errors=list(ops.values()),
        reference_frequency=abs(2 * params.g),
    ))


def _level_local(dim, target, source):
    m = np.zeros((dim, dim), dtype=complex)
    m[target, source] = 1.0
    return m


# -- correctability demonstrations ------------------------------------------------

_BLOCK_WORDS = ("1010", "0101")


def _bits(levels):
    """Qubit level indices -> bit values (index 0 is |1>)."""
    return tuple(1 - x for x in levels)


def make_eight_qubit_demo(params: ProtocolParams | None = None) -> ProtocolSpec:
    """Static two-block code ``|+>|+>``, ``|->|->`` with
    ``|+-> = (|1010> +- |0101>)/sqrt2`` on eight qubits.

    The syndrome is the six within-block neighbour correlators. The default
    table corrects single decays; ``extra_tables['bit_flip']`` corrects single
    bit flips. Phase flips are not correctable.
    """
    params = params or ProtocolParams(g=0.0)
    labels = [f"q{i}" for i in range(8)]
    L = HilbertLayout([(lab, "qubit") for lab in labels])
    sq = math.sqrt(0.5)

    def block_state(sign, first):
        w0, w1 = _BLOCK_WORDS
        return [(sq, w0), (sign * sq, w1)] if first else [(sq, w0), (sign * sq, w1)]

    def word_state(words_coeffs):
        return L.superpose(words_coeffs)

    def product(b1, b2):
        terms = [(c1 * c2, w1 + w2) for c1, w1 in b1 for c2, w2 in b2]
        return word_state(terms)

    plus = [(sq, "1010"), (sq, "0101")]
    minus = [(sq, "1010"), (-sq, "0101")]
    A, B = product(plus, plus), product(minus, minus)
    code = CodeSpec(L, {"++": A, "--": B})
    pairs = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)]

    def label_of(bits):
        return 1.0 + sum(2 ** n for n, (i, j) in enumerate(pairs) if bits[i] == bits[j])

    obs = _diagonal_observable(L, lambda lv: label_of(_bits(lv)))
    X = {i: LinearOperator(L, _op(L, labels[i], SIGMA_X).matrix, is_unitary=True) for i in range(8)}
    Z = {i: _op(L, labels[i], SIGMA_Z) for i in range(8)}
    SM = {i: _op(L, labels[i], SIGMA_MINUS) for i in range(8)}

    def flipped_label(i):
        bits = [int(c) for c in "10101010"]
        bits[i] ^= 1
        return label_of(bits)

    decay_branches, flip_branches = {}, {}
    for i in range(8):
        blk, pos = divmod(i, 4)
        base = next(w for w in _BLOCK_WORDS if w[pos] == "1")
        sign = 1.0 if base == "1010" else -1.0
        dec = base[:pos] + "0" + base[pos + 1:]
        dec_terms = [(1.0, dec)]
        if blk == 0:
            s_plus, s_minus = product(dec_terms, plus), product(dec_terms, minus)
        else:
            s_plus, s_minus = product(plus, dec_terms), product(minus, dec_terms)
        decay_branches[flipped_label(i)] = complete_unitary(L, [(s_plus, A), (s_minus, B * sign)])
        flip_branches[flipped_label(i)] = X[i]
    decay_table = _table(SyndromeNode(obs, decay_branches, "block correlators"), "decay")
    flip_table = _table(SyndromeNode(obs, flip_branches, "block correlators"), "bit_flip")
    channels = [JumpChannel(SM[i], params.gamma, "ph") for i in range(8)] if params.gamma > 0 else []
    spec = ProtocolSpec(
        name="eight_qubit_demo", code=code, sensing_hamiltonian=_zero(L), params=params,
        initial_state=code.state([1, 1]), error_channels=channels, syndromes=decay_table,
        ideal_reference=None,
        error_sets={"decay": ErrorSet({f"sigma_-[q{i}]": SM[i] for i in range(8)}),
                    "bit_flip": ErrorSet({f"sigma_x[q{i}]": X[i] for i in range(8)}),
                    "phase_flip": ErrorSet({f"sigma_z[q{i}]": Z[i] for i in range(8)},
                                           expect_correctable=False)},
        recoverable_errors=list(SM.values()), extra_tables={"bit_flip": flip_table},
        reference_frequency=0.0,
        notes={"bit_flip_errors": list(X.values()), "phase_flip_errors": list(Z.values())},
    )
    return _finish(spec)


def make_shor_like_code():
    """Six-qubit code ``|+>|+>``, ``|->|->`` with ``|+-> = (|111> +- |000>)/sqrt2``.

    Returns ``(code, clean_projector, no_detection)`` where ``clean_projector``
    projects on states with all within-block correlators aligned and
    ``no_detection(eps)`` is the Kraus operator of no decay on any qubit when
    each excited qubit decays with amplitude ``eps``.
    """
    L = HilbertLayout([(f"q{i}", "qubit") for i in range(6)])
    sq = math.sqrt(0.5)
    plus = [(sq, "111"), (sq, "000")]
    minus = [(sq, "111"), (-sq, "000")]

    def product(b1, b2):
        return L.superpose([(c1 * c2, w1 + w2) for c1, w1 in b1 for c2, w2 in b2])

    code = CodeSpec(L, {"++": product(plus, plus), "--": product(minus, minus)})
    clean = np.zeros((L.total_dim, L.total_dim), dtype=complex)
    for w1 in ("111", "000"):
        for w2 in ("111", "000"):
            v = L.ket(w1 + w2).amplitudes
            clean += np.outer(v, v)

    def no_detection(eps):
        local = np.diag([math.sqrt(1 - eps ** 2), 1.0]).astype(complex)
        return embed_many(L, {f"q{i}": local for i in range(6)}).matrix

    return code, clean, no_detection


def make_ghz_decay_case():
    """Code ``{|111>, |000>}`` with decay of qubit 0: not correctable."""
    L = HilbertLayout([(f"q{i}", "qubit") for i in range(3)])
    code = CodeSpec(L, {"111": L.ket("111"), "000": L.ket("000")})
    return code, {"sigma_-[q0]": _op(L, "q0", SIGMA_MINUS)}


# -- registry -----------------------------------------------------------------------

PROTOCOLS = {
    "classical_drive": make_classical_drive_protocol,
    "interaction": make_interaction_protocol,
    "pulsed_dd": make_pulsed_dd_protocol,
    "raman_t1": make_raman_t1_protocol,
    "flipflop": make_flipflop_protocol,
    "ramsey_flipflop": make_ramsey_flipflop_protocol,
    "sideband": make_sideband_protocol,
    "ms": make_ms_protocol,
    "superradiance": make_superradiance_protocol,
    "multilevel": make_multilevel_protocol,
    "both_decay": make_both_decay_protocol,
    "eight_qubit_demo": make_eight_qubit_demo,
}


def build_protocol(name: str, params: ProtocolParams | None = None) -> ProtocolSpec:
    """Construct a registered protocol by name."""
    try:
        factory = PROTOCOLS[name]
    except KeyError:
        raise KeyError(f"unknown protocol {name!r}; choose from {sorted(PROTOCOLS)}") from None
    return factory(params if params is not None else ProtocolParams())


def check_protocol(spec: ProtocolSpec) -> dict:
    """Knill-Laflamme report for every error set a protocol declares."""
    out = {}
    for set_name, es in spec.error_sets.items():
        reports = check_correctability(spec.code, es.errors, spec.sensing_hamiltonian)
        verdict = all(r.correctable for r in reports)
        out[set_name] = {"expected_correctable": es.expect_correctable,
                         "correctable": verdict,
                         "matches_expectation": verdict == es.expect_correctable,
                         "errors": [r.as_dict() for r in reports]}
    return out
