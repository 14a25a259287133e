"""Stochastic noise processes: piecewise-constant classical drive noise and
first-order jump/no-jump unraveling of spontaneous decay."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .hilbert import LinearOperator, QuantumState

__all__ = [
    "ClassicalNoiseTrace",
    "JumpChannel",
    "PhotonRecord",
    "sample_noise",
    "jump_step",
    "superradiant_jump",
    "MAX_JUMP_PROBABILITY_STEP",
]

# Gamma*dt bound keeping the first-order jump probability error below 0.25%
MAX_JUMP_PROBABILITY_STEP = 0.05

_BLOCK = 256


class ClassicalNoiseTrace:
    """Uniform noise held constant on intervals of length ``resample_interval``.

    Value ``k`` is the ``k``-th uniform draw of a generator seeded with
    ``seed``; draws are made lazily in blocks, so the value on an interval
    does not depend on the order in which intervals are queried.
    """

    def __init__(self, resample_interval: float, amplitude_range: tuple[float, float],
                 seed: int | np.random.SeedSequence):
        if resample_interval <= 0:
            raise ValueError("resample_interval must be positive")
        low, high = amplitude_range
        if high < low:
            raise ValueError("amplitude_range must be (low, high) with low <= high")
        self.resample_interval = float(resample_interval)
        self.low = float(low)
        self.high = float(high)
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._values = np.empty(0)

    def __repr__(self):
        return (f"ClassicalNoiseTrace(interval={self.resample_interval}, "
                f"range=({self.low}, {self.high}))")

    def interval_index(self, t: float) -> int:
        # guard float round-off right at an interval edge
        return int(np.floor(t / self.resample_interval + 1e-9))

    def value(self, k: int) -> float:
        if k < 0:
            raise ValueError("interval index must be non-negative")
        while k >= self._values.size:
            block = self._rng.uniform(self.low, self.high, size=_BLOCK)
            self._values = np.concatenate([self._values, block])
        return float(self._values[k])


def sample_noise(trace: ClassicalNoiseTrace, t: float) -> float:
    if t < 0:
        raise ValueError("noise is defined for t >= 0")
    return trace.value(trace.interval_index(t))


@dataclass
class JumpChannel:
    """Decay channel ``rate * D[jump_operator]`` whose emitted quanta are
    counted under ``photon_label``."""

    jump_operator: LinearOperator
    rate: float
    photon_label: str = "ph"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("jump rate must be positive")

    @property
    def layout(self):
        return self.jump_operator.layout

    @property
    def decay_operator(self) -> np.ndarray:
        """``J^dagger J``."""
        J = self.jump_operator.matrix
        return J.conj().T @ J


@dataclass
class PhotonRecord:
    counts: Counter = field(default_factory=Counter)

    def add(self, label: str, n: int = 1):
        if n < 0:
            raise ValueError("photon counts only increase")
        self.counts[label] += n

    def __getitem__(self, label: str) -> int:
        return self.counts[label]


def jump_probability(state: QuantumState, channel: JumpChannel, dt: float) -> float:
    return channel.rate * dt * float(np.vdot(state.amplitudes,
                                             channel.decay_operator @ state.amplitudes).real)


def jump_step(state: QuantumState, channel: JumpChannel, dt: float,
              rng: np.random.Generator, record: PhotonRecord | None = None
              ) -> tuple[QuantumState, bool]:
    """One first-order step of the jump/no-jump unraveling.

    Jumps with probability ``rate*dt*<J^dag J>`` to ``J psi`` (renormalized);
    otherwise applies ``1 - rate*dt*J^dag J / 2`` and renormalizes.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if channel.rate * dt > MAX_JUMP_PROBABILITY_STEP:
        raise ValueError(
            f"rate*dt = {channel.rate * dt:.3g} exceeds {MAX_JUMP_PROBABILITY_STEP}; "
            "reduce the step"
        )
    psi = state.amplitudes
    p = jump_probability(state, channel, dt)
    if rng.random() < p:
        out = channel.jump_operator.matrix @ psi
        if record is not None:
            record.add(channel.photon_label)
        return QuantumState(state.layout, out / np.linalg.norm(out)), True
    out = psi - 0.5 * channel.rate * dt * (channel.decay_operator @ psi)
    return QuantumState(state.layout, out / np.linalg.norm(out)), False


def superradiant_jump(state: QuantumState, channel: JumpChannel, dt: float,
                      rng: np.random.Generator, record: PhotonRecord | None = None
                      ) -> tuple[QuantumState, bool]:
    """Collective decay step; same contract as :func:`jump_step` with a
    jump operator such as ``sigma_-^1 + sigma_-^2``."""
    return jump_step(state, channel, dt, rng, record)
