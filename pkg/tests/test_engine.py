import numpy as np
import pytest

import ecsense.engine as engine
from ecsense.codes import ProtocolParams
from ecsense.engine import (Schedule, default_workers, force_event, run_batch, run_ensemble,
                            run_trajectory, trajectory_seed)
from ecsense.protocols import build_protocol

from oracle import oracle_observables

P = ProtocolParams(g=1.0, nu=0.1, omega=1.0, delta=10.0, gamma=1.0, omega_g=0.5,
                   noise_range=(-0.5, 0.5))
SCHED = Schedule(dt=0.01, total_time=1.0, sample_times=np.linspace(0, 1, 6), ec_interval=0.05)


def _same(a, b):
    return all(np.array_equal(a.mean[k], b.mean[k]) and np.array_equal(a.stderr[k], b.stderr[k])
               for k in a.mean)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(dt=0.0, total_time=1.0)
    with pytest.raises(ValueError):
        Schedule(dt=0.1, total_time=1.0, ec_interval=0.05)
    with pytest.raises(ValueError):
        Schedule(dt=0.1, total_time=1.0, sample_times=[0.5, 0.2])
    with pytest.raises(ValueError):
        Schedule(dt=0.1, total_time=1.0, sample_times=[2.0])
    with pytest.raises(ValueError):
        Schedule(dt=0.1, total_time=1.0).validate_for(
            build_protocol("flipflop", ProtocolParams(gamma=10.0)))


def test_noise_interval_precedence():
    s = Schedule(dt=0.01, total_time=1.0, ec_interval=0.1)
    assert s.noise_interval_for(None) == 0.1
    assert s.noise_interval_for(0.3) == 0.3
    assert Schedule(dt=0.01, total_time=1.0, noise_interval=0.02).noise_interval_for(None) == 0.02
    assert Schedule(dt=0.01, total_time=1.0).noise_interval_for(None) == 0.01


@pytest.mark.parametrize("name", ["classical_drive", "flipflop", "pulsed_dd"])
def test_deterministic_across_workers_and_chunks(name):
    spec = build_protocol(name, P)
    a = run_ensemble(spec, SCHED, 40, 11, workers=1)
    b = run_ensemble(spec, SCHED, 40, 11, workers=3, chunk_size=7)
    assert _same(a, b)
    assert np.array_equal(a.batch.observables["fidelity"], b.batch.observables["fidelity"])


def test_trajectory_equals_ensemble_member():
    spec = build_protocol("flipflop", P)
    ens = run_ensemble(spec, SCHED, 10, 4)
    rec = run_trajectory(spec, SCHED, trajectory_seed(4, 6))
    assert np.array_equal(rec["fidelity"], ens.batch.observables["fidelity"][6])


@pytest.mark.parametrize("name", ["ms", "flipflop", "superradiance", "raman_t1"])
def test_fused_path_matches_general(name, monkeypatch):
    spec = build_protocol(name, P)
    sched = Schedule(dt=0.01, total_time=0.5, sample_times=[0, 0.25, 0.5], ec_interval=0.01)
    fast = run_ensemble(spec, sched, 30, 2)
    monkeypatch.setattr(engine, "FUSE_EC_STEPS", False)
    slow = run_ensemble(spec, sched, 30, 2)
    for k in fast.mean:
        assert np.allclose(fast.batch.observables[k], slow.batch.observables[k], atol=1e-12), k


def test_noise_free_without_ec_is_ideal():
    spec = build_protocol("classical_drive", P)
    b = run_batch(spec, SCHED, [trajectory_seed(0, 0)], noise_free=True, ec=False,
                  reference=engine.ideal_states(spec, SCHED))
    assert np.allclose(b.observables["fidelity"], 1.0)


def test_forced_event_validation():
    spec = build_protocol("flipflop", P)
    with pytest.raises(ValueError):
        run_batch(spec, SCHED, [trajectory_seed(0, 0)], events=[force_event(5.0, channel=0)])
    with pytest.raises(ValueError):
        run_batch(spec, SCHED, [trajectory_seed(0, 0)], events=[force_event(0.5, channel=9)])


def test_forced_jump_without_ec_loses_code():
    spec = build_protocol("flipflop", P)
    b = run_batch(spec, SCHED, [trajectory_seed(0, 0)], noise_free=True, ec=False,
                  events=[force_event(0.1, channel=0)])
    assert b.observables["code_population"][0, -1] < 1e-9


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("ECSENSE_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("ECSENSE_WORKERS", "x")
    with pytest.raises(ValueError):
        default_workers()
    monkeypatch.delenv("ECSENSE_WORKERS")
    assert default_workers() == 1


@pytest.mark.parametrize("name", ["flipflop", "multilevel", "ms"])
def test_small_oracle_agreement(name):
    spec = build_protocol(name, P)
    sched = Schedule(dt=5e-3, total_time=0.5, sample_times=[0, 0.25, 0.5], ec_interval=0.05)
    n = 2000
    st = run_ensemble(spec, sched, n, 1, keep_batch=False)
    for k, ref in oracle_observables(spec, sched).items():
        assert np.all(np.abs(st.mean[k] - ref) <= 5 * np.maximum(st.stderr[k], 1 / n)), k
