"""Code spaces, syndrome tables, protocol records and the Knill-Laflamme
correctability check."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from .hilbert import HilbertLayout, LinearOperator, QuantumState
from .noise import JumpChannel

__all__ = [
    "ProtocolParams",
    "CodeSpec",
    "SyndromeNode",
    "SyndromeTable",
    "ClassicalCoupling",
    "TimeDependentTerm",
    "ProtocolSpec",
    "complete_unitary",
    "check_correctability",
    "CorrectabilityReport",
    "undetected_leakage",
    "verify_recovery",
    "ErrorSet",
]

CORRECTABILITY_TOL = 1e-8


@dataclass(frozen=True)
class ProtocolParams:
    """Physical constants of a scheme (units: the caller's frequency unit).

    ``omega`` doubles as the second Raman leg and ``delta`` as the Raman
    detuning where a scheme has one. ``extra`` carries scheme-specific knobs.
    """

    g: float = 1.0
    nu: float = 0.0
    omega: float = 0.0
    delta: float = 0.0
    gamma: float = 0.0
    eta: float = 1.0
    omega_g: float = 0.0
    noise_range: tuple[float, float] = (0.0, 0.0)
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("g", "nu", "omega", "delta", "gamma", "eta", "omega_g"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"parameter {name} must be finite")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        lo, hi = self.noise_range
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError("noise_range must be a finite (low, high) pair")
        object.__setattr__(self, "noise_range", (float(lo), float(hi)))
        object.__setattr__(self, "extra", dict(self.extra))

    @property
    def epsilon(self) -> float:
        """Raman admixture ``omega / delta``."""
        return self.omega / self.delta if self.delta else math.inf

    def check_raman_ratio(self, threshold: float = 0.2):
        ratio = abs(self.epsilon)
        if ratio > threshold:
            warnings.warn(f"Raman ratio omega/delta = {ratio:.3g} exceeds {threshold}; "
                          "adiabatic elimination is inaccurate", stacklevel=3)
        return ratio

    def to_dict(self) -> dict:
        return {"g": self.g, "nu": self.nu, "omega": self.omega, "delta": self.delta,
                "gamma": self.gamma, "eta": self.eta, "omega_g": self.omega_g,
                "noise_range": list(self.noise_range), "extra": dict(self.extra)}


class CodeSpec:
    """Named logical basis plus optional utility (non-code) states."""

    def __init__(self, layout: HilbertLayout, code_states: Mapping[str, QuantumState],
                 utility_states: Mapping[str, QuantumState] | None = None, tol: float = 1e-10):
        self.layout = layout
        self.code_states = dict(code_states)
        self.utility_states = dict(utility_states or {})
        basis = self.basis
        gram = basis.conj().T @ basis
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > tol:
            raise ValueError("code states are not orthonormal")
        for name, u in self.utility_states.items():
            if np.max(np.abs(basis.conj().T @ u.amplitudes)) > tol:
                raise ValueError(f"utility state {name!r} overlaps the code")

    @property
    def names(self) -> list[str]:
        return list(self.code_states)

    @property
    def basis(self) -> np.ndarray:
        """Columns are the code states."""
        return np.stack([s.amplitudes for s in self.code_states.values()], axis=1)

    @property
    def projector(self) -> np.ndarray:
        V = self.basis
        return V @ V.conj().T

    @property
    def utility_projector(self) -> np.ndarray:
        n = self.layout.total_dim
        P = np.zeros((n, n), dtype=complex)
        for u in self.utility_states.values():
            P += np.outer(u.amplitudes, u.amplitudes.conj())
        return P

    def state(self, coeffs: Sequence[complex]) -> QuantumState:
        """Normalized code-span state with the given logical amplitudes."""
        return QuantumState(self.layout, self.basis @ np.asarray(coeffs, dtype=complex)).normalize()

    def __getitem__(self, name: str) -> QuantumState:
        if name in self.code_states:
            return self.code_states[name]
        return self.utility_states[name]


Action = Union[LinearOperator, "SyndromeNode", None]


@dataclass
class SyndromeNode:
    """Measure ``observable``; each outcome maps to a correction unitary, a
    further measurement, or ``None`` (do nothing). Outcomes missing from
    ``branches`` also do nothing."""

    observable: LinearOperator
    branches: dict[float, Action] = field(default_factory=dict)
    name: str = ""

    def action_for(self, eigenvalue: float) -> Action:
        for key, act in self.branches.items():
            if abs(key - eigenvalue) < 1e-6:
                return act
        return None


class SyndromeTable:
    """Measurement-and-correction sequence of one EC cycle."""

    def __init__(self, root: SyndromeNode, name: str = ""):
        self.root = root
        self.name = name

    def steps(self) -> list[SyndromeNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop(0)
            out.append(node)
            stack.extend(a for a in node.branches.values() if isinstance(a, SyndromeNode))
        return out

    def kraus_operators(self) -> np.ndarray:
        """Flatten the tree into the instrument ``{U_k P_k ... P_1}``; stacked
        ``(n_outcomes, D, D)``. The operators satisfy ``sum K^dag K = I``."""
        mats: list[np.ndarray] = []

        def walk(node: SyndromeNode, prefix: np.ndarray):
            for val, P in node.observable.spectral_projectors:
                act = node.action_for(val)
                K = P @ prefix
                if isinstance(act, SyndromeNode):
                    walk(act, K)
                elif isinstance(act, LinearOperator):
                    mats.append(act.matrix @ K)
                else:
                    mats.append(K)

        n = self.root.observable.layout.total_dim
        walk(self.root, np.eye(n, dtype=complex))
        return np.stack([m for m in mats if np.max(np.abs(m)) > 0])

    def apply(self, state: QuantumState, rng: np.random.Generator) -> tuple[QuantumState, int]:
        """Run one cycle on a single state; returns the corrected state and
        the index of the realized outcome."""
        K = self.kraus_operators()
        branches = K @ state.amplitudes
        probs = np.einsum("ki,ki->k", branches.conj(), branches).real
        k = int(np.searchsorted(np.cumsum(probs) / probs.sum(), rng.random(), side="right"))
        k = min(k, len(probs) - 1)
        return QuantumState(state.layout, branches[k] / np.linalg.norm(branches[k])), k


@dataclass
class ClassicalCoupling:
    """``f(t) * operator`` with ``f`` uniform in ``amplitude_range``, held
    constant per resample interval (schedule default when ``None``)."""

    operator: LinearOperator
    amplitude_range: tuple[float, float]
    name: str = "f"
    resample_interval: float | None = None


@dataclass
class TimeDependentTerm:
    """``c(t) * operator`` given the antiderivative of ``c``; each step uses
    the exact average of ``c`` over the step."""

    operator: LinearOperator
    antiderivative: Callable[[float], float]

    def mean_coefficient(self, t0: float, t1: float) -> float:
        return (self.antiderivative(t1) - self.antiderivative(t0)) / (t1 - t0)


@dataclass
class ErrorSet:
    """Named operators checked together, with the verdict the scheme claims."""

    errors: dict[str, LinearOperator]
    expect_correctable: bool = True


@dataclass
class ProtocolSpec:
    name: str
    code: CodeSpec
    sensing_hamiltonian: LinearOperator
    params: ProtocolParams
    initial_state: QuantumState
    error_channels: list = field(default_factory=list)
    syndromes: SyndromeTable | None = None
    ideal_reference: Callable[[float], float] | None = None
    time_dependent: list[TimeDependentTerm] = field(default_factory=list)
    dd_unitary: LinearOperator | None = None
    signal: Callable[[np.ndarray, float], np.ndarray] | None = None
    error_sets: dict[str, ErrorSet] = field(default_factory=dict)
    recoverable_errors: list[LinearOperator] = field(default_factory=list)
    extra_tables: dict[str, SyndromeTable] = field(default_factory=dict)
    reference_frequency: float | None = None
    dd_period: float | None = None
    dd_offset: float = 0.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sensing_hamiltonian.is_hermitian:
            raise ValueError("sensing Hamiltonian must be Hermitian")

    @property
    def layout(self) -> HilbertLayout:
        return self.code.layout

    @property
    def jump_channels(self) -> list[JumpChannel]:
        return [c for c in self.error_channels if isinstance(c, JumpChannel)]

    @property
    def classical_couplings(self) -> list[ClassicalCoupling]:
        return [c for c in self.error_channels if isinstance(c, ClassicalCoupling)]

    def code_block(self) -> np.ndarray:
        """Sensing Hamiltonian restricted to the code span."""
        V = self.code.basis
        return V.conj().T @ self.sensing_hamiltonian.matrix @ V


def _orthonormal_complement(vectors: np.ndarray, dim: int) -> np.ndarray:
    if vectors.shape[1] == 0:
        return np.eye(dim, dtype=complex)
    P = vectors @ vectors.conj().T
    w, V = np.linalg.eigh(np.eye(dim) - P)
    return V[:, w > 0.5]


def complete_unitary(layout: HilbertLayout,
                     pairs: Sequence[tuple[QuantumState, QuantumState]]) -> LinearOperator:
    """Unitary with ``U|source> = |target>`` for each pair.

    Sources must be orthonormal, as must targets. The remaining directions
    are mapped between the orthogonal complements in a fixed but arbitrary
    way; that part only acts on states the protocol never reaches.
    """
    n = layout.total_dim
    S = np.stack([s.amplitudes for s, _ in pairs], axis=1)
    T = np.stack([t.amplitudes for _, t in pairs], axis=1)
    for M, what in ((S, "sources"), (T, "targets")):
        if np.max(np.abs(M.conj().T @ M - np.eye(M.shape[1]))) > 1e-10:
            raise ValueError(f"correction {what} must be orthonormal")
    Sc = _orthonormal_complement(S, n)
    Tc = _orthonormal_complement(T, n)
    U = T @ S.conj().T + Tc @ Sc.conj().T
    return LinearOperator(layout, U, is_unitary=True)


@dataclass
class CorrectabilityReport:
    name: str
    correctable: bool
    violation_norm: float
    distinguishable_from_signal: bool | None = None

    def as_dict(self) -> dict:
        return {"error": self.name, "correctable": self.correctable,
                "violation_norm": self.violation_norm,
                "distinguishable_from_signal": self.distinguishable_from_signal}


def check_correctability(code: CodeSpec, errors: Sequence[LinearOperator] | Mapping[str, LinearOperator],
                         hamiltonian: LinearOperator | None = None, include_identity: bool = True,
                         tol: float = CORRECTABILITY_TOL) -> list[CorrectabilityReport]:
    """Knill-Laflamme test ``P E_i^dag E_j P = c_ij P`` over an error set.

    Each report's ``violation_norm`` is the largest spectral-norm deviation
    over all pairs involving that error; ``correctable`` is the verdict for
    the whole set, so every report carries the same flag.
    """
    if not isinstance(errors, Mapping):
        errors = {f"E{i}": e for i, e in enumerate(errors)}
    named = dict(errors)
    ops = {k: v.matrix for k, v in named.items()}
    if include_identity:
        ops = {"I": np.eye(code.layout.total_dim, dtype=complex), **ops}
    V = code.basis
    k = V.shape[1]
    keys = list(ops)
    worst = {key: 0.0 for key in keys}
    for a in keys:
        Ea = ops[a] @ V
        for b in keys:
            M = Ea.conj().T @ (ops[b] @ V)
            c = np.trace(M) / k
            dev = float(np.linalg.norm(M - c * np.eye(k), 2))
            worst[a] = max(worst[a], dev)
            worst[b] = max(worst[b], dev)
    verdict = max(worst.values()) < tol
    reports = []
    H = None
    if hamiltonian is not None:
        H = V.conj().T @ hamiltonian.matrix @ V
        H = H - np.trace(H) / k * np.eye(k)
    for name in named:
        dist = None
        if H is not None:
            E = V.conj().T @ ops[name] @ V
            E = E - np.trace(E) / k * np.eye(k)
            nh, ne = np.linalg.norm(H), np.linalg.norm(E)
            if ne < tol or nh < tol:
                dist = True
            else:
                # indistinguishable when the logical action of the error is parallel to the signal
                cos = abs(np.vdot(H, E)) / (nh * ne)
                dist = bool(cos < 1 - 1e-9)
        reports.append(CorrectabilityReport(name, verdict, worst[name], dist))
    return reports


def undetected_leakage(code: CodeSpec, kraus: np.ndarray, clean_projector: np.ndarray) -> float:
    """Norm of the part of ``kraus @ P`` that leaves the code while staying in
    the syndrome-clean subspace, i.e. damage no syndrome can flag."""
    P = code.projector
    return float(np.linalg.norm((clean_projector - P) @ kraus @ P, 2))


def verify_recovery(protocol: ProtocolSpec, n_random: int = 4, seed: int = 0,
                    tol: float = 1e-10) -> float:
    """Worst infidelity after applying each recoverable error to random code
    states and running every branch of one EC cycle. Raises if above ``tol``."""
    if protocol.syndromes is None:
        return 0.0
    rng = np.random.default_rng(seed)
    K = protocol.syndromes.kraus_operators()
    V = protocol.code.basis
    worst = 0.0
    errs = [np.eye(V.shape[0])] + [e.matrix for e in protocol.recoverable_errors]
    for _ in range(n_random):
        c = rng.normal(size=V.shape[1]) + 1j * rng.normal(size=V.shape[1])
        psi = V @ (c / np.linalg.norm(c))
        for E in errs:
            phi = E @ psi
            nrm = np.linalg.norm(phi)
            if nrm < 1e-12:
                continue
            phi = phi / nrm
            for Kk in K:
                out = Kk @ phi
                w = np.linalg.norm(out)
                if w < 1e-9:
                    continue
                f = abs(np.vdot(psi, out / w)) ** 2
                worst = max(worst, 1 - f)
    if worst > tol:
        raise ValueError(f"{protocol.name}: EC cycle leaves infidelity {worst:.3g}")
    return worst
