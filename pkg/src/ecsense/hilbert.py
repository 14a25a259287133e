"""Dense state vectors and operators on small tensor-product Hilbert spaces.

Basis ordering is mixed-radix with the first listed factor most significant,
which is the ordering produced by ``np.kron(first, second, ...)``.

Qubit factors list the excited level first: index 0 is ``|1> = |up>`` and
index 1 is ``|0> = |down>``. With that ordering ``sigma_z = diag(1, -1)`` and
the lowering operator ``sigma_- = |0><1|`` has its single entry below the
diagonal. Boson factors are truncated Fock ladders ``|n=0>, |n=1>, ...``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Factor",
    "HilbertLayout",
    "QuantumState",
    "LinearOperator",
    "embed_factor_operator",
    "evolve_piecewise_constant",
    "measure_projective",
    "fidelity",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "SIGMA_PLUS",
    "SIGMA_MINUS",
    "destroy",
    "create",
]

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |up> is index 0, so raising maps index 1 -> index 0
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)

_QUBIT_ALIASES = {
    "1": 0, "u": 0, "up": 0, "↑": 0, "e": 0,
    "0": 1, "d": 1, "down": 1, "↓": 1, "g": 1,
}


def destroy(dim: int) -> np.ndarray:
    """Truncated bosonic annihilation operator on ``dim`` Fock levels."""
    return np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)


def create(dim: int) -> np.ndarray:
    return destroy(dim).conj().T


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Factor:
    label: str
    kind: str
    dim: int
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == "qubit" and self.dim != 2:
            raise LayoutError(f"qubit factor {self.label!r} must have dim 2")
        if self.kind == "boson" and self.dim < 2:
            raise LayoutError(f"boson factor {self.label!r} needs dim >= 2")
        if self.kind == "level" and len(self.levels) != self.dim:
            raise LayoutError(f"level factor {self.label!r} needs {self.dim} level names")
        if self.kind not in ("qubit", "boson", "level"):
            raise LayoutError(f"unknown factor kind {self.kind!r}")

    def level_index(self, name) -> int:
        key = str(name)
        if self.kind == "qubit":
            try:
                return _QUBIT_ALIASES[key]
            except KeyError:
                raise LayoutError(f"unknown qubit level {name!r} on {self.label!r}") from None
        if self.kind == "boson":
            n = int(key)
            if not 0 <= n < self.dim:
                raise LayoutError(f"Fock level {n} outside truncation of {self.label!r}")
            return n
        try:
            return self.levels.index(key)
        except ValueError:
            raise LayoutError(f"unknown level {name!r} on {self.label!r}") from None


class HilbertLayout:
    """Ordered tensor-product structure.

    Parameters
    ----------
    factors : sequence of tuples
        ``(label, kind)`` for qubits, ``(label, "boson", dim)`` for truncated
        modes and ``(label, "level", (name, ...))`` for multi-level systems.
    """

    def __init__(self, factors: Sequence[tuple]):
        parsed = []
        for spec in factors:
            if isinstance(spec, Factor):
                parsed.append(spec)
                continue
            label, kind, *rest = spec
            if kind == "qubit":
                parsed.append(Factor(label, "qubit", 2))
            elif kind == "boson":
                parsed.append(Factor(label, "boson", int(rest[0]) if rest else 2))
            elif kind == "level":
                levels = tuple(str(x) for x in rest[0])
                parsed.append(Factor(label, "level", len(levels), levels))
            else:
                raise LayoutError(f"unknown factor kind {kind!r}")
        labels = [f.label for f in parsed]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"factor labels must be unique, got {labels}")
        if not parsed:
            raise LayoutError("layout needs at least one factor")
        self.factors: tuple[Factor, ...] = tuple(parsed)
        self.dims = tuple(f.dim for f in parsed)
        self.total_dim = int(np.prod(self.dims))

    def __repr__(self):
        inner = ", ".join(f"{f.label}:{f.kind}[{f.dim}]" for f in self.factors)
        return f"HilbertLayout({inner})"

    def __eq__(self, other):
        return isinstance(other, HilbertLayout) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.factors)

    def position(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"no factor labelled {label!r} in {self!r}") from None

    def index_of(self, levels: Sequence) -> int:
        """Flat basis index for one level name per factor."""
        if len(levels) != len(self.factors):
            raise LayoutError(f"expected {len(self.factors)} levels, got {len(levels)}")
        idx = 0
        for f, name in zip(self.factors, levels):
            idx = idx * f.dim + f.level_index(name)
        return idx

    def ket(self, *levels) -> "QuantumState":
        """Basis state. ``layout.ket("u", "0", "1")`` or ``layout.ket("u01")``
        when every level name is a single character."""
        if len(levels) == 1 and isinstance(levels[0], str) and len(self.factors) > 1:
            levels = tuple(levels[0])
        vec = np.zeros(self.total_dim, dtype=complex)
        vec[self.index_of(levels)] = 1.0
        return QuantumState(self, vec)

    def superpose(self, terms: Iterable[tuple[complex, str | Sequence]]) -> "QuantumState":
        """Normalized linear combination of basis kets."""
        vec = np.zeros(self.total_dim, dtype=complex)
        for coeff, levels in terms:
            lv = tuple(levels) if isinstance(levels, str) else levels
            vec[self.index_of(lv)] += coeff
        return QuantumState(self, vec).normalize()

    def identity(self) -> "LinearOperator":
        return LinearOperator(self, np.eye(self.total_dim, dtype=complex), True, True)


class QuantumState:
    """Amplitude vector bound to a layout. Treated as immutable."""

    __slots__ = ("layout", "amplitudes")

    def __init__(self, layout: HilbertLayout, amplitudes):
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.shape != (layout.total_dim,):
            raise LayoutError(
                f"amplitude vector of shape {amps.shape} does not match dim {layout.total_dim}"
            )
        self.layout = layout
        self.amplitudes = amps

    def __repr__(self):
        return f"QuantumState(dim={self.layout.total_dim}, norm={self.norm():.6g})"

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "QuantumState":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return QuantumState(self.layout, self.amplitudes / n)

    def overlap(self, other: "QuantumState") -> complex:
        """``<self|other>``."""
        _check_same_layout(self.layout, other.layout)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __add__(self, other: "QuantumState") -> "QuantumState":
        _check_same_layout(self.layout, other.layout)
        return QuantumState(self.layout, self.amplitudes + other.amplitudes)

    def __sub__(self, other: "QuantumState") -> "QuantumState":
        _check_same_layout(self.layout, other.layout)
        return QuantumState(self.layout, self.amplitudes - other.amplitudes)

    def __mul__(self, scalar: complex) -> "QuantumState":
        return QuantumState(self.layout, self.amplitudes * scalar)

    __rmul__ = __mul__

    def projector(self) -> "LinearOperator":
        v = self.amplitudes
        return LinearOperator(self.layout, np.outer(v, v.conj()), is_hermitian=True)


class LinearOperator:
    """Dense matrix on a layout.

    ``is_hermitian``/``is_unitary`` default to a numerical check; passing
    ``True`` validates the claim and raises if it fails. The Hermitian
    eigendecomposition is computed lazily once per object.
    """

    def __init__(self, layout: HilbertLayout, matrix, is_hermitian: bool | None = None,
                 is_unitary: bool | None = None):
        mat = np.asarray(matrix, dtype=complex)
        n = layout.total_dim
        if mat.shape != (n, n):
            raise LayoutError(f"matrix of shape {mat.shape} does not match dim {n}")
        herm = float(np.max(np.abs(mat - mat.conj().T))) < HERMITIAN_TOL
        unit = float(np.max(np.abs(mat.conj().T @ mat - np.eye(n)))) < UNITARY_TOL
        if is_hermitian and not herm:
            raise ValueError("operator flagged Hermitian but M != M^dagger")
        if is_unitary and not unit:
            raise ValueError("operator flagged unitary but M^dagger M != I")
        self.layout = layout
        self.matrix = mat
        self.is_hermitian = herm if is_hermitian is None else bool(is_hermitian)
        self.is_unitary = unit if is_unitary is None else bool(is_unitary)

    def __repr__(self):
        return (f"LinearOperator(dim={self.layout.total_dim}, hermitian={self.is_hermitian}, "
                f"unitary={self.is_unitary})")

    @property
    def dag(self) -> "LinearOperator":
        return LinearOperator(self.layout, self.matrix.conj().T)

    def __matmul__(self, other):
        if isinstance(other, QuantumState):
            _check_same_layout(self.layout, other.layout)
            return QuantumState(self.layout, self.matrix @ other.amplitudes)
        if isinstance(other, LinearOperator):
            _check_same_layout(self.layout, other.layout)
            return LinearOperator(self.layout, self.matrix @ other.matrix)
        return NotImplemented

    def __add__(self, other: "LinearOperator") -> "LinearOperator":
        _check_same_layout(self.layout, other.layout)
        return LinearOperator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other: "LinearOperator") -> "LinearOperator":
        _check_same_layout(self.layout, other.layout)
        return LinearOperator(self.layout, self.matrix - other.matrix)

    def __mul__(self, scalar) -> "LinearOperator":
        return LinearOperator(self.layout, self.matrix * scalar)

    __rmul__ = __mul__

    def expectation(self, state: QuantumState) -> complex:
        return complex(np.vdot(state.amplitudes, self.matrix @ state.amplitudes))

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.is_hermitian:
            raise ValueError("Hermitian eigendecomposition requested for non-Hermitian operator")
        return np.linalg.eigh(self.matrix)

    @cached_property
    def spectral_projectors(self) -> list[tuple[float, np.ndarray]]:
        """Distinct eigenvalues (ascending) with the projector onto each eigenspace."""
        vals, vecs = self.eigh
        groups: list[list[int]] = []
        for i, v in enumerate(vals):
            if groups and abs(v - vals[groups[-1][0]]) < 1e-9:
                groups[-1].append(i)
            else:
                groups.append([i])
        out = []
        for g in groups:
            block = vecs[:, g]
            out.append((float(np.mean(vals[g])), block @ block.conj().T))
        return out


def _check_same_layout(a: HilbertLayout, b: HilbertLayout):
    if a is not b and a != b:
        raise LayoutError(f"layout mismatch: {a!r} vs {b!r}")


def embed_factor_operator(layout: HilbertLayout, factor_label: str, local_matrix) -> LinearOperator:
    """Place ``local_matrix`` on one factor, identity elsewhere."""
    pos = layout.position(factor_label)
    local = np.asarray(local_matrix, dtype=complex)
    d = layout.dims[pos]
    if local.shape != (d, d):
        raise LayoutError(
            f"local matrix {local.shape} does not fit factor {factor_label!r} of dim {d}"
        )
    parts = [local if i == pos else np.eye(di) for i, di in enumerate(layout.dims)]
    return LinearOperator(layout, reduce(np.kron, parts))


def embed_many(layout: HilbertLayout, locals_: dict[str, np.ndarray]) -> LinearOperator:
    """Tensor product of local operators on several factors at once."""
    for label in locals_:
        layout.position(label)
    parts = []
    for f in layout.factors:
        parts.append(np.asarray(locals_[f.label], dtype=complex) if f.label in locals_
                     else np.eye(f.dim))
    return LinearOperator(layout, reduce(np.kron, parts))


def propagator(hamiltonian: LinearOperator, duration: float) -> np.ndarray:
    """``exp(-i H t)`` from the cached eigendecomposition."""
    vals, vecs = hamiltonian.eigh
    return (vecs * np.exp(-1j * vals * duration)) @ vecs.conj().T


def evolve_piecewise_constant(state: QuantumState, hamiltonian: LinearOperator,
                              duration: float) -> QuantumState:
    if not hamiltonian.is_hermitian:
        raise ValueError("evolution requires a Hermitian Hamiltonian")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    _check_same_layout(state.layout, hamiltonian.layout)
    if duration == 0:
        return state
    return QuantumState(state.layout, propagator(hamiltonian, duration) @ state.amplitudes)


def measure_projective(state: QuantumState, observable: LinearOperator,
                       rng: np.random.Generator) -> tuple[float, QuantumState]:
    """Born-rule sample of an observable; returns the eigenvalue and the collapsed state."""
    _check_same_layout(state.layout, observable.layout)
    if not observable.is_hermitian:
        raise ValueError("observable must be Hermitian")
    projectors = observable.spectral_projectors
    psi = state.amplitudes
    branches = [P @ psi for _, P in projectors]
    probs = np.array([np.vdot(b, b).real for b in branches])
    probs = probs / probs.sum()
    k = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    k = min(k, len(probs) - 1)
    norm = np.linalg.norm(branches[k])
    if norm == 0.0:
        raise RuntimeError("sampled a measurement outcome with zero weight")
    return projectors[k][0], QuantumState(state.layout, branches[k] / norm)


def fidelity(a: QuantumState, b: QuantumState) -> float:
    """``|<a|b>|^2``, clipped to [0, 1]."""
    return float(min(1.0, max(0.0, abs(a.overlap(b)) ** 2)))
