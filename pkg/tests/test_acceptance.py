"""Acceptance suite: one test per acceptance criterion, tolerances as specified.

Long-running criteria (3, 4, 8) are marked ``slow``. Criterion 8 can be
restricted to some protocols with ``ECSENSE_ORACLE_PROTOCOLS=ms,flipflop``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from ecsense.cli import execute_run, execute_sweep, main
from ecsense.codes import ProtocolParams, check_correctability
from ecsense.config import load_config
from ecsense.engine import Schedule, force_event, ideal_states, run_batch, run_ensemble, trajectory_seed
from ecsense.estimators import (SensitivityParams, delta_g, delta_g_ec, delta_g_strong, optimal_time,
                                random_walk_stats)
from ecsense.protocols import build_protocol, check_protocol, make_ghz_decay_case

from oracle import oracle_observables

PRESETS = Path(__file__).resolve().parents[1] / "src" / "ecsense" / "presets"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _curves(preset):
    """Run every curve of a preset; returns ``{label: (stats, protocol)}``."""
    cfg = load_config(PRESETS / preset)
    out = {}
    for c in cfg.curves:
        spec = build_protocol(c.protocol, c.params)
        out[c.label] = (run_ensemble(spec, c.schedule, cfg.n_traj, cfg.master_seed, ec=c.ec), spec)
    return cfg, out


# 1 -----------------------------------------------------------------------------------------
def test_criterion_01_fig2_fidelity_ordering():
    t0 = time.perf_counter()
    cfg, runs = _curves("fig2.json")
    assert cfg.n_traj == 1024
    times = runs["no_ec"][0].times
    assert np.allclose(times, 2 * np.pi * np.arange(11))
    f = {k: runs[k][0].mean["fidelity"] for k in ("ec_0.2", "ec_0.5", "no_ec")}
    for k in range(2, 11):
        assert f["ec_0.2"][k] > f["ec_0.5"][k] > f["no_ec"][k], (k, {n: v[k] for n, v in f.items()})
    assert f["ec_0.2"][10] >= 0.9
    assert time.perf_counter() - t0 < 120


# 2 -----------------------------------------------------------------------------------------
def test_criterion_02_fig2_inset_correlation():
    t0 = time.perf_counter()
    _, runs = _curves("fig2_inset.json")
    st, spec = runs["ec_0.2"]
    ref = np.array([spec.ideal_reference(t) for t in st.times])
    r_ec = np.corrcoef(st.mean["survival"][1:], ref[1:])[0, 1]
    r_no = np.corrcoef(runs["no_ec"][0].mean["survival"][1:], ref[1:])[0, 1]
    assert r_ec > 0.95, r_ec
    assert r_no < 0.8, r_no
    assert time.perf_counter() - t0 < 120


# 3 -----------------------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_03_ms_tracks_reference():
    t0 = time.perf_counter()
    cfg, runs = _curves("fig3.json")
    assert cfg.n_traj >= 200
    st, spec = runs["ec_tau1e-3_eps1e-2"]
    ref = np.array([spec.ideal_reference(t) for t in st.times])
    period = math.pi / spec.notes["omega_eff"]
    assert st.times[-1] >= period - 1e-9
    nrms = np.sqrt(np.mean((st.mean["signal"] - ref) ** 2)) / (ref.max() - ref.min())
    assert nrms < 0.1, nrms
    sig = runs["no_ec_eps1e-3"][0].mean["signal"]
    assert sig.max() - sig.min() <= 0.5 * (ref.max() - ref.min()), sig.max() - sig.min()
    assert time.perf_counter() - t0 < 600


# 4 -----------------------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_04_t2_star_scaling():
    t0 = time.perf_counter()
    cfg = load_config(PRESETS / "msfig.json")
    res = execute_sweep(cfg, None)
    eps, t2 = [], []
    for point, row in zip(cfg.sweep["points"], res["rows"]):
        eps.append(point["set"]["params.raman.epsilon"])
        t2.append(row[res["header"].index("T2_star")])
        assert bool(row[res["header"].index("T2_star_reliable")])
    assert sorted(eps) == [0.03, 0.05, 0.1]
    eps, t2 = np.array(eps), np.array(t2)
    T1 = 1.0
    slope = np.polyfit(np.log(eps), np.log(t2), 1)[0]
    c = float(np.exp(np.mean(np.log(t2 * eps ** 2 / T1))))
    report = f"slope={slope:.3f} c={c:.3f} T2*={t2.tolist()}"
    assert abs(slope + 2) <= 0.3, report
    assert 1.0 <= c <= 2.0, report
    assert time.perf_counter() - t0 < 1200


# 5 -----------------------------------------------------------------------------------------
def test_criterion_05_random_walk_law():
    t0 = time.perf_counter()
    eps, m, T1 = 0.05, 100, 1.0
    omega = 200.0
    params = ProtocolParams(g=0.0, omega=omega, delta=omega / eps, gamma=1 / T1,
                            extra={"dressed": True, "initial": [0.0, 1.0]})
    spec = build_protocol("raman_t1", params)
    sched = Schedule(dt=0.05 * T1, total_time=m * T1, sample_times=[0.0, m * T1], ec_interval=T1)
    r = random_walk_stats(spec, sched, 1000, 2024, relative=False)
    mean_abs2, se = r["mean_abs2"][-1], r["abs2_stderr"][-1]
    mb, mb_se = r["mean_beta"][-1], r["mean_beta_stderr"][-1]
    report = f"<|beta|^2>={mean_abs2:.4f}+-{se:.4f} <beta>={mb:.4f}"
    assert abs(mb.real) <= 4 * mb_se.real and abs(mb.imag) <= 4 * mb_se.imag, report
    assert abs(mean_abs2 - m * eps ** 2 / 2) <= 4 * se, report
    assert time.perf_counter() - t0 < 300


# 6 -----------------------------------------------------------------------------------------
def test_criterion_06_sensitivity_formula():
    for row in json.loads((FIXTURES / "delta_g_golden.json").read_text()):
        v = delta_g(SensitivityParams(row["t"], row["T1"], row["g"], row["n"], row["T"]))
        assert v == pytest.approx(float(row["delta_g"]), rel=1e-12)
    t_opt, _ = optimal_time(10.0, 1.0, t_max=1.0)
    assert math.sin(2 * 10.0 * t_opt) ** 2 > 0.99
    t_opt, _ = optimal_time(0.01, 1.0, t_max=1.0)
    assert t_opt == 1.0
    gT1 = np.logspace(-3, -2, 6)
    ratio = [delta_g_ec(1.0) / delta_g_strong(x, 1.0) for x in gT1]
    assert np.polyfit(np.log(gT1), np.log(ratio), 1)[0] == pytest.approx(1.0, abs=0.05)
    # the same slope from the optimized full formula, not only its asymptote
    ratio = [delta_g_ec(1.0) / optimal_time(x, 1.0, t_max=1.0)[1] for x in gT1]
    assert np.polyfit(np.log(gT1), np.log(ratio), 1)[0] == pytest.approx(1.0, abs=0.05)


# 7 -----------------------------------------------------------------------------------------
def test_criterion_07_correctability_verdicts():
    p = ProtocolParams(g=1.0, omega=1.0, delta=20.0, gamma=1.0, omega_g=0.5)
    correctable = [("flipflop", "decay"), ("sideband", "spin_decay"), ("sideband", "phonon_loss"),
                   ("superradiance", "collective_decay"), ("multilevel", "decay"),
                   ("both_decay", "decay"), ("eight_qubit_demo", "decay"),
                   ("eight_qubit_demo", "bit_flip")]
    for name, set_name in correctable:
        r = check_protocol(build_protocol(name, p))[set_name]
        assert r["correctable"], (name, set_name)
        assert max(e["violation_norm"] for e in r["errors"]) < 1e-8, (name, set_name)
    r = check_protocol(build_protocol("eight_qubit_demo", p))["phase_flip"]
    assert not r["correctable"]
    code, errs = make_ghz_decay_case()
    assert not any(rep.correctable for rep in check_correctability(code, errs))


# 8 -----------------------------------------------------------------------------------------
ORACLE_CASES = {
    "classical_drive": ProtocolParams(g=1.0, nu=0.1, noise_range=(-0.5, 0.5)),
    "interaction": ProtocolParams(g=1.0, nu=0.1, noise_range=(-0.5, 0.5)),
    "pulsed_dd": ProtocolParams(g=1.0, extra={"fz_range": (-1.0, 1.0)}),
    "raman_t1": ProtocolParams(g=1.0, omega=1.0, delta=10.0, gamma=1.0),
    "flipflop": ProtocolParams(g=1.0, gamma=1.0),
    "ramsey_flipflop": ProtocolParams(omega=2.0, nu=0.5, delta=0.3, gamma=1.0),
    "sideband": ProtocolParams(eta=0.1, omega=5.0, gamma=1.0, extra={"phonon_gamma": 0.5}),
    "ms": ProtocolParams(g=3.0, omega=3.0, delta=30.0, gamma=1.0),
    "superradiance": ProtocolParams(g=1.0, omega_g=0.5, gamma=1.0),
    "multilevel": ProtocolParams(g=1.0, gamma=1.0),
    "both_decay": ProtocolParams(g=1.0, gamma=1.0),
}


@pytest.mark.slow
def test_criterion_08_oracle_equivalence():
    """Ensemble means within 5 standard errors of the density-matrix result.

    The sample standard error is floored at ``1/N``: an N-trajectory mean of
    a [0, 1]-valued observable cannot resolve branches rarer than ``1/N``
    (e.g. EC error branches of order ``(f dt)^2``), for which the sample
    spread reads as zero.
    """
    t0 = time.perf_counter()
    only = os.environ.get("ECSENSE_ORACLE_PROTOCOLS")
    names = [n for n in ORACLE_CASES if not only or n in only.split(",")]
    n_traj = 10_000
    sched = Schedule(dt=2e-3, total_time=1.0, sample_times=np.linspace(0, 1, 11), ec_interval=0.05,
                     noise_interval=2e-3)
    failures = []
    for name in names:
        spec = build_protocol(name, ORACLE_CASES[name])
        assert spec.layout.total_dim <= 32
        st = run_ensemble(spec, sched, n_traj, 7, keep_batch=False)
        ora = oracle_observables(spec, sched)
        for obs, ref in ora.items():
            tol = 5 * np.maximum(st.stderr[obs], 1.0 / n_traj)
            bad = np.abs(st.mean[obs] - ref) > tol
            if bad.any():
                failures.append((name, obs, float(np.abs(st.mean[obs] - ref).max())))
    assert not failures, failures
    assert time.perf_counter() - t0 < 1800


# 9 -----------------------------------------------------------------------------------------
RAMAN_LIKE = {"raman_t1", "ms"}


def _random_code_state(spec, rng):
    c = rng.normal(size=2) + 1j * rng.normal(size=2)
    return spec.code.state(c / np.linalg.norm(c))


def test_criterion_09_single_cycle_recovery():
    p = ProtocolParams(g=1.0, nu=0.1, omega=1.0, delta=20.0, gamma=1.0, omega_g=0.5, eta=0.1)
    rng = np.random.default_rng(9)
    tau = 0.01
    sched = Schedule(dt=tau, total_time=tau, sample_times=[0.0, tau], ec_interval=tau)
    checked = 0
    for name in ORACLE_CASES:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            spec = build_protocol(name, p)
        eps = abs(p.omega / p.delta)
        floor = 1 - 3 * eps ** 2 if name in RAMAN_LIKE else 1 - 1e-9
        cases = [(spec, e) for e in spec.recoverable_errors]
        for base, err in cases:
            for _ in range(3):
                s = dataclasses.replace(base, initial_state=_random_code_state(base, rng))
                ref = ideal_states(s, sched)
                b = run_batch(s, sched, [trajectory_seed(0, 0)], noise_free=True, reference=ref,
                              events=[force_event(tau, operator=err)])
                assert b.observables["fidelity"][0, -1] >= floor, (name, b.observables["fidelity"][0, -1])
                checked += 1
    demo = build_protocol("eight_qubit_demo")
    for table_name, errs in (("decay", demo.error_sets["decay"].errors),
                             ("bit_flip", demo.error_sets["bit_flip"].errors)):
        table = demo.syndromes if table_name == "decay" else demo.extra_tables["bit_flip"]
        s0 = dataclasses.replace(demo, syndromes=table)
        for err in errs.values():
            s = dataclasses.replace(s0, initial_state=_random_code_state(s0, rng))
            ref = ideal_states(s, sched)
            b = run_batch(s, sched, [trajectory_seed(0, 0)], noise_free=True, reference=ref,
                          events=[force_event(tau, operator=err)])
            assert b.observables["fidelity"][0, -1] >= 1 - 1e-9, (table_name, b.observables["fidelity"])
            checked += 1
    assert checked > 50


# 10 ----------------------------------------------------------------------------------------
def test_criterion_10_determinism_across_workers(tmp_path, monkeypatch):
    monkeypatch.delenv("ECSENSE_WORKERS", raising=False)
    t0 = time.perf_counter()
    outs = []
    for w in (1, 8):
        out = tmp_path / f"w{w}"
        assert main(["run", str(PRESETS / "fig2.json"), "--out", str(out), "--workers", str(w)]) == 0
        outs.append((out / "timeseries.csv").read_bytes())
    assert outs[0] == outs[1]
    assert time.perf_counter() - t0 < 300
