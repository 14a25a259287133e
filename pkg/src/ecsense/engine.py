"""Trajectory scheduler and seeded ensemble runner.

A batch of trajectories is advanced together as an ``(n_traj, dim)`` array.
Every trajectory owns its random streams, derived from ``(master_seed,
index)``, and consumes a fixed number of uniforms per step, so a trajectory's
history does not depend on which batch or worker ran it.

Within one step the order is: coherent evolution, jump sampling (one uniform
per channel), forced events, DD pulse, EC cycle (one uniform), recording.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codes import ProtocolSpec
from .hilbert import LinearOperator
from .noise import MAX_JUMP_PROBABILITY_STEP, ClassicalNoiseTrace

__all__ = [
    "Schedule",
    "ForcedEvent",
    "force_event",
    "TrajectoryRecord",
    "TrajectoryBatch",
    "EnsembleStats",
    "run_trajectory",
    "run_batch",
    "run_ensemble",
    "ideal_states",
    "trajectory_seed",
    "OBSERVABLES",
    "CHUNK_SIZE",
]

OBSERVABLES = ("fidelity", "survival", "code_population", "utility_population", "signal")
CHUNK_SIZE = 64
# use the fused EC step where it applies (switch off to cross-check)
FUSE_EC_STEPS = True
_UNIFORM_BLOCK = 512
_TIME_TOL = 1e-9


@dataclass
class Schedule:
    """Time grid of a run.

    ``ec_interval=None`` disables error correction. ``dd_period`` defaults to
    the protocol's own pulse period when it has one (``dd=False`` disables
    pulses). ``noise_interval`` is the classical-noise resampling period
    (default: ``ec_interval``, else ``dt``).
    """

    dt: float
    total_time: float
    sample_times: Sequence[float] | None = None
    ec_interval: float | None = None
    dd_period: float | None = None
    dd_offset: float | None = None
    dd: bool = True
    noise_interval: float | None = None
    ec_dead_time: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not (self.total_time >= 0 and math.isfinite(self.total_time)):
            raise ValueError("total_time must be non-negative")
        if self.ec_interval is not None:
            if not self.ec_interval > 0:
                raise ValueError("ec_interval must be positive")
            if self.dt > self.ec_interval * (1 + 1e-12):
                raise ValueError("dt must not exceed ec_interval")
        if self.sample_times is None:
            self.sample_times = [0.0, self.total_time]
        st = np.asarray(self.sample_times, dtype=float)
        if st.ndim != 1 or st.size == 0:
            raise ValueError("sample_times must be a non-empty list")
        if np.any(np.diff(st) < 0):
            raise ValueError("sample_times must be sorted")
        if st[0] < -_TIME_TOL or st[-1] > self.total_time + _TIME_TOL:
            raise ValueError("sample_times must lie in [0, total_time]")
        self.sample_times = [float(x) for x in st]
        if self.noise_interval is not None and not self.noise_interval > 0:
            raise ValueError("noise_interval must be positive")
        if self.ec_dead_time < 0:
            raise ValueError("ec_dead_time must be non-negative")

    def validate_for(self, protocol: ProtocolSpec):
        for ch in protocol.jump_channels:
            if ch.layout != protocol.layout:
                raise ValueError(f"jump channel {ch.photon_label!r} lives on another layout")
            if ch.rate * self.dt > MAX_JUMP_PROBABILITY_STEP + 1e-12:
                raise ValueError(f"rate*dt = {ch.rate * self.dt:.3g} for channel "
                                 f"{ch.photon_label!r} exceeds {MAX_JUMP_PROBABILITY_STEP}")
        for c in protocol.classical_couplings:
            if c.operator.layout != protocol.layout:
                raise ValueError(f"noise coupling {c.name!r} lives on another layout")

    def noise_interval_for(self, resample_interval: float | None) -> float:
        if resample_interval is not None:
            return float(resample_interval)
        if self.noise_interval is not None:
            return float(self.noise_interval)
        return float(self.ec_interval if self.ec_interval is not None else self.dt)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "total_time": self.total_time,
                "sample_times": list(self.sample_times), "ec_interval": self.ec_interval,
                "dd_period": self.dd_period, "dd_offset": self.dd_offset, "dd": self.dd,
                "noise_interval": self.noise_interval, "ec_dead_time": self.ec_dead_time}


@dataclass(frozen=True)
class ForcedEvent:
    """Deterministic event at time ``t``: a unitary/operator, or a jump on
    channel index ``channel``. ``trajectories=None`` applies to all."""

    t: float
    operator: LinearOperator | None = None
    channel: int | None = None
    trajectories: tuple[int, ...] | None = None

    def __post_init__(self):
        if (self.operator is None) == (self.channel is None):
            raise ValueError("a forced event needs exactly one of operator or channel")


def force_event(t: float, *, operator: LinearOperator | None = None, channel: int | None = None,
                trajectories: Sequence[int] | None = None) -> ForcedEvent:
    return ForcedEvent(float(t), operator, channel,
                       None if trajectories is None else tuple(trajectories))


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    photons: dict[str, int]
    code_amplitudes: np.ndarray
    seed: object = None

    def __getitem__(self, name):
        return self.observables[name]


@dataclass
class TrajectoryBatch:
    """Raw per-trajectory records of a batch; arrays are ``(n, n_samples)``."""

    times: np.ndarray
    indices: np.ndarray
    observables: dict[str, np.ndarray]
    photons: dict[str, np.ndarray]
    code_amplitudes: np.ndarray
    final_states: np.ndarray
    sample_states: np.ndarray | None = None

    def record(self, i: int, seed=None) -> TrajectoryRecord:
        return TrajectoryRecord(self.times, {k: v[i] for k, v in self.observables.items()},
                                {k: int(v[i]) for k, v in self.photons.items()},
                                self.code_amplitudes[i], seed)

    @staticmethod
    def concat(parts: list["TrajectoryBatch"]) -> "TrajectoryBatch":
        p0 = parts[0]
        return TrajectoryBatch(
            p0.times, np.concatenate([p.indices for p in parts]),
            {k: np.concatenate([p.observables[k] for p in parts]) for k in p0.observables},
            {k: np.concatenate([p.photons[k] for p in parts]) for k in p0.photons},
            np.concatenate([p.code_amplitudes for p in parts]),
            np.concatenate([p.final_states for p in parts]))


@dataclass
class EnsembleStats:
    times: np.ndarray
    n: int
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    photons_mean: dict[str, float] = field(default_factory=dict)
    batch: TrajectoryBatch | None = None

    @classmethod
    def from_batch(cls, batch: TrajectoryBatch, keep: bool = True) -> "EnsembleStats":
        n = batch.indices.size
        mean, se = {}, {}
        for k, v in batch.observables.items():
            mean[k] = v.mean(axis=0)
            se[k] = v.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(v.shape[1])
        ph = {k: float(v.mean()) for k, v in batch.photons.items()}
        return cls(batch.times, n, mean, se, ph, batch if keep else None)


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed of trajectory ``index`` of an ensemble with ``master_seed``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def _child(ss: np.random.SeedSequence, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (k,))


class _Uniforms:
    """Per-trajectory uniform streams, drawn in blocks."""

    def __init__(self, seeds: list[np.random.SeedSequence]):
        self._gens = [np.random.default_rng(_child(s, 0)) for s in seeds]
        self._buf = np.empty((len(seeds), 0))
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._buf.shape[1]:
            self._buf = np.stack([g.random(_UNIFORM_BLOCK) for g in self._gens])
            self._pos = 0
        u = self._buf[:, self._pos]
        self._pos += 1
        return u


def _event_times(schedule: Schedule, protocol: ProtocolSpec, noise_intervals, forced):
    T = schedule.total_time
    pts = [np.arange(0.0, T + schedule.dt * 0.5, schedule.dt)]
    ec = []
    if schedule.ec_interval is not None:
        ec = np.arange(schedule.ec_interval, T + _TIME_TOL, schedule.ec_interval)
        pts.append(ec)
    dd = []
    period = schedule.dd_period if schedule.dd_period is not None else protocol.dd_period
    offset = schedule.dd_offset if schedule.dd_offset is not None else protocol.dd_offset
    if schedule.dd and protocol.dd_unitary is not None and period:
        dd = np.arange(offset, T + _TIME_TOL, period)
        dd = dd[dd > _TIME_TOL]
        pts.append(dd)
    for iv in noise_intervals:
        if iv < T:
            pts.append(np.arange(iv, T + _TIME_TOL, iv))
    pts.append(np.asarray(schedule.sample_times))
    pts.append(np.asarray([e.t for e in forced]))
    if schedule.ec_dead_time > 0 and len(ec):
        pts.append(np.asarray(ec) + schedule.ec_dead_time)
    allt = np.sort(np.concatenate([np.atleast_1d(p) for p in pts] + [[0.0, T]]))
    allt = allt[(allt >= 0) & (allt <= T + _TIME_TOL)]
    merged = [allt[0]]
    for t in allt[1:]:
        if t - merged[-1] > _TIME_TOL * max(1.0, abs(t)):
            merged.append(t)
    merged = np.asarray(merged)
    merged[-1] = min(merged[-1], T) if merged.size > 1 else merged[-1]

    def flags(ts):
        f = np.zeros(merged.size, dtype=bool)
        if len(ts):
            idx = np.searchsorted(merged, np.asarray(ts) - _TIME_TOL * np.maximum(1, np.abs(ts)))
            idx = np.clip(idx, 0, merged.size - 1)
            f[idx] = True
        return f

    return merged, flags(ec), flags(dd), flags(schedule.sample_times)


def _expm_batch(vals, vecs, h):
    """``V diag(exp(-i w h)) V^dag`` for stacked eigendecompositions."""
    ph = np.exp(-1j * vals * h)
    return np.einsum("...ij,...j,...kj->...ik", vecs, ph, vecs.conj())


def run_batch(protocol: ProtocolSpec, schedule: Schedule, seeds: Sequence[np.random.SeedSequence],
              indices: Sequence[int] | None = None, events: Sequence[ForcedEvent] = (),
              noise_free: bool = False, ec: bool = True,
              reference: np.ndarray | None = None,
              capture_states: bool = False) -> TrajectoryBatch:
    """Advance one batch of trajectories through the whole schedule.

    ``noise_free`` drops jumps and classical noise (used for the ideal
    reference); ``reference`` holds the ideal states at the sample times.
    """
    schedule.validate_for(protocol)
    L = protocol.layout
    D = L.total_dim
    n = len(seeds)
    indices = np.arange(n) if indices is None else np.asarray(indices)
    for e in events:
        if e.t < -_TIME_TOL or e.t > schedule.total_time + _TIME_TOL:
            raise ValueError(f"forced event at t={e.t} lies outside [0, {schedule.total_time}]")
        if e.operator is not None and e.operator.layout != L:
            raise ValueError("forced event operator lives on another layout")
    jumps = [] if noise_free else protocol.jump_channels
    for e in events:
        if e.channel is not None and not 0 <= e.channel < len(protocol.jump_channels):
            raise ValueError(f"no jump channel with index {e.channel}")
    couplings = [] if noise_free else protocol.classical_couplings
    noise_iv = [schedule.noise_interval_for(c.resample_interval) for c in couplings]
    times, is_ec, is_dd, is_sample = _event_times(schedule, protocol, noise_iv, events)
    if not ec or protocol.syndromes is None:
        is_ec[:] = False
    ec_times = times[is_ec]

    H0 = protocol.sensing_hamiltonian.matrix
    td = protocol.time_dependent
    kraus = protocol.syndromes.kraus_operators() if protocol.syndromes is not None else None
    kraus_t = kraus.transpose(0, 2, 1).copy() if kraus is not None else None
    dd_u = protocol.dd_unitary.matrix if protocol.dd_unitary is not None else None
    traces = [[ClassicalNoiseTrace(iv, c.amplitude_range, _child(s, 1 + j)) for s in seeds]
              for j, (c, iv) in enumerate(zip(couplings, noise_iv))]
    uni = _Uniforms(list(seeds))

    psi = np.tile(protocol.initial_state.amplitudes, (n, 1))
    P_code = protocol.code.projector
    P_util = protocol.code.utility_projector
    V = protocol.code.basis
    psi0 = protocol.initial_state.amplitudes
    ns = len(schedule.sample_times)
    obs = {k: np.zeros((n, ns)) for k in OBSERVABLES}
    camp = np.zeros((n, ns, V.shape[1]), dtype=complex)
    states = np.zeros((n, ns, D), dtype=complex) if capture_states else None
    labels = sorted({c.photon_label for c in protocol.jump_channels})
    photons = {lab: np.zeros(n, dtype=np.int64) for lab in labels}
    decay = [ch.decay_operator for ch in jumps]
    jmat = [ch.jump_operator.matrix.T for ch in jumps]
    static_cache: dict[float, np.ndarray] = {}
    noise_cache: dict[tuple, tuple] = {}
    sample_pos = 0

    def record(t):
        nonlocal sample_pos
        # several requested sample times may collapse onto one event time
        while sample_pos < ns and abs(schedule.sample_times[sample_pos] - t) <= _TIME_TOL * max(1, abs(t)):
            k = sample_pos
            if reference is not None:
                obs["fidelity"][:, k] = np.abs(psi @ reference[k].conj()) ** 2
            obs["survival"][:, k] = np.abs(psi @ psi0.conj()) ** 2
            obs["code_population"][:, k] = np.einsum("bi,ij,bj->b", psi.conj(), P_code, psi).real
            if P_util.any():
                obs["utility_population"][:, k] = np.einsum("bi,ij,bj->b", psi.conj(), P_util, psi).real
            if protocol.signal is not None:
                obs["signal"][:, k] = protocol.signal(psi, t)
            else:
                obs["signal"][:, k] = obs["survival"][:, k]
            camp[:, k] = psi @ V.conj()
            if states is not None:
                states[:, k] = psi
            sample_pos += 1

    def apply_rows(mat_t, rows=None):
        nonlocal psi
        if rows is None:
            psi = psi @ mat_t
        else:
            psi[rows] = psi[rows] @ mat_t

    steps_key = np.round(np.diff(times, prepend=0.0), 12).tolist()
    dead = schedule.ec_dead_time if ec_times.size else 0.0
    # Fused step: static propagator, at most one jump channel and an EC cycle
    # with nothing else at that instant. Propagation, the jump/no-jump split
    # and all Kraus branches collapse into one stacked matrix; the random
    # numbers drawn are the same as on the general path.
    event_steps = set()
    for e in events:
        event_steps.add(int(np.argmin(np.abs(times - e.t))))
    fusable = (FUSE_EC_STEPS and kraus is not None and not couplings and not td and dead == 0 and len(jumps) <= 1)
    fused_cache: dict[float, np.ndarray] = {}
    m_k = kraus.shape[0] if kraus is not None else 0
    rows_n = np.arange(n)
    record(0.0)
    for i in range(1, times.size):
        t0, t1 = times[i - 1], times[i]
        h = t1 - t0
        if fusable and is_ec[i] and not is_dd[i] and i not in event_steps:
            hk = steps_key[i]
            stack = fused_cache.get(hk)
            if stack is None:
                w, v = np.linalg.eigh(H0)
                U = _expm_batch(w, v, h)
                if jumps:
                    ch = jumps[0]
                    N = np.eye(D) - 0.5 * ch.rate * h * decay[0]
                    stack = np.concatenate([kraus @ (N @ U), kraus @ (ch.jump_operator.matrix @ U)])
                else:
                    stack = kraus @ U
                stack = stack.transpose(0, 2, 1).copy()
                fused_cache[hk] = stack
            br = psi @ stack
            pr = (br.real ** 2 + br.imag ** 2).sum(axis=2)
            offset = 0
            if jumps:
                ch = jumps[0]
                u = uni.next()
                jumped = u < ch.rate * h * pr[m_k:].sum(axis=0)
                if jumped.any():
                    photons[ch.photon_label][jumped] += 1
                    pr = np.where(jumped[None, :], pr[m_k:], pr[:m_k])
                    offset = np.where(jumped, m_k, 0)
                else:
                    pr = pr[:m_k]
            u = uni.next()
            cum = np.cumsum(pr, axis=0)
            cum /= cum[-1]
            choice = np.minimum((u[None, :] >= cum).sum(axis=0), m_k - 1)
            out = br[choice + offset, rows_n]
            psi = out / np.sqrt((out.real ** 2 + out.imag ** 2).sum(axis=1))[:, None]
            if is_sample[i]:
                record(t1)
            continue
        # coherent evolution over [t0, t1]
        mid = 0.5 * (t0 + t1)
        Hs = H0
        sensing_on = True
        if dead > 0:
            j = np.searchsorted(ec_times, mid) - 1
            sensing_on = not (j >= 0 and mid < ec_times[j] + dead)
        if not sensing_on:
            Hs = np.zeros_like(H0)
        elif td:
            Hs = H0 + sum(term.mean_coefficient(t0, t1) * term.operator.matrix for term in td)
        if couplings:
            ks = tuple(int(math.floor(mid / iv + 1e-9)) for iv in noise_iv)
            key = ks + ((t0, t1) if td else ()) + (sensing_on,)
            if key not in noise_cache:
                noise_cache.clear()
                f = np.array([[tr.value(k) for tr in trs] for trs, k in zip(traces, ks)])  # (nc, n)
                Hb = np.broadcast_to(Hs, (n, D, D)).copy()
                for j, c in enumerate(couplings):
                    Hb += f[j][:, None, None] * c.operator.matrix
                noise_cache[key] = np.linalg.eigh(Hb)
            vals, vecs = noise_cache[key]
            U = _expm_batch(vals, vecs, h)
            psi = np.einsum("bij,bj->bi", U, psi)
        elif td and sensing_on:
            w, v = np.linalg.eigh(Hs)
            psi = psi @ _expm_batch(w, v, h).T
        else:
            hk = (steps_key[i], sensing_on)
            if hk not in static_cache:
                w, v = np.linalg.eigh(Hs)
                static_cache[hk] = _expm_batch(w, v, h).T
            psi = psi @ static_cache[hk]
        # jump / no-jump for each channel
        for ch, G, Jt in zip(jumps, decay, jmat):
            u = uni.next()
            Jpsi = psi @ Jt
            p = ch.rate * h * (Jpsi.real ** 2 + Jpsi.imag ** 2).sum(axis=1)
            jumped = u < p
            out = psi - (0.5 * ch.rate * h) * (psi @ G.T)
            if jumped.any():
                out[jumped] = Jpsi[jumped]
                photons[ch.photon_label][jumped] += 1
            psi = out / np.sqrt((out.real ** 2 + out.imag ** 2).sum(axis=1))[:, None]
        # forced events
        for e in events:
            if abs(e.t - t1) <= _TIME_TOL * max(1, abs(t1)):
                rows = None if e.trajectories is None else np.isin(indices, e.trajectories)
                if e.operator is not None:
                    mat = e.operator.matrix.T
                else:
                    ch = protocol.jump_channels[e.channel]
                    mat = ch.jump_operator.matrix.T
                    sel = np.ones(n, bool) if rows is None else rows
                    photons[ch.photon_label][sel] += 1
                apply_rows(mat, rows)
                sel = slice(None) if rows is None else rows
                psi[sel] = psi[sel] / np.linalg.norm(psi[sel], axis=1, keepdims=True)
        if is_dd[i]:
            psi = psi @ dd_u.T
        if is_ec[i] and kraus is not None:
            u = uni.next()
            branches = psi @ kraus_t  # (k, n, D)
            probs = (branches.real ** 2 + branches.imag ** 2).sum(axis=2)
            cum = np.cumsum(probs, axis=0)
            cum /= cum[-1]
            choice = np.minimum((u[None, :] >= cum).sum(axis=0), kraus.shape[0] - 1)
            out = branches[choice, np.arange(n)]
            psi = out / np.linalg.norm(out, axis=1, keepdims=True)
        if is_sample[i]:
            record(t1)
    while sample_pos < ns:
        record(times[-1])
    return TrajectoryBatch(np.asarray(schedule.sample_times), indices, obs, photons, camp, psi,
                           states)


def ideal_states(protocol: ProtocolSpec, schedule: Schedule) -> np.ndarray:
    """Noise-free, correction-free states at the sample times: the reference
    for the fidelity observable. Shape ``(n_samples, dim)``."""
    b = run_batch(protocol, schedule, [np.random.SeedSequence(0)], noise_free=True, ec=False,
                  capture_states=True)
    return b.sample_states[0]


def run_trajectory(protocol: ProtocolSpec, schedule: Schedule, seed,
                   events: Sequence[ForcedEvent] = (), ec: bool = True) -> TrajectoryRecord:
    """Single trajectory. ``seed`` is an int or a ``SeedSequence`` such as
    :func:`trajectory_seed` (``master_seed``, ``index``), in which case the
    result equals member ``index`` of the corresponding ensemble."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    ref = ideal_states(protocol, schedule)
    b = run_batch(protocol, schedule, [ss], events=events, ec=ec, reference=ref)
    return b.record(0, seed)


def _run_chunk(args):
    protocol, schedule, master_seed, idx, events, ec, ref = args
    seeds = [trajectory_seed(master_seed, i) for i in idx]
    return run_batch(protocol, schedule, seeds, indices=idx, events=events, ec=ec, reference=ref)


def default_workers() -> int:
    env = os.environ.get("ECSENSE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"ECSENSE_WORKERS must be an integer, got {env!r}") from None
    return 1


def run_ensemble(protocol: ProtocolSpec, schedule: Schedule, n_traj: int, master_seed: int,
                 workers: int | None = None, events: Sequence[ForcedEvent] = (),
                 ec: bool = True, keep_batch: bool = True,
                 chunk_size: int = CHUNK_SIZE) -> EnsembleStats:
    """Seeded ensemble of ``n_traj`` trajectories.

    Trajectories are split into fixed-size chunks independent of ``workers``
    and reduced in index order, so the statistics are bit-identical for any
    worker count.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be at least 1")
    ref = ideal_states(protocol, schedule)
    chunks = [np.arange(s, min(s + chunk_size, n_traj)) for s in range(0, n_traj, chunk_size)]
    jobs = [(protocol, schedule, master_seed, idx, tuple(events), ec, ref) for idx in chunks]
    if workers == 1 or len(jobs) == 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    return EnsembleStats.from_batch(TrajectoryBatch.concat(parts), keep=keep_batch)
