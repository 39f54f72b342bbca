"""End-to-end acceptance checks; each test records one PASS/FAIL summary line."""

from __future__ import annotations

import time
from importlib.resources import files

import numpy as np
import pytest

from postsbc.backends import ExactConjugateBackend, ShiftedConjugateBackend
from postsbc.datasets import PELT_PARAMS
from postsbc.models import LotkaVolterraModel, LvParams, NormalModel, lv_invariant
from postsbc.models.lotka_volterra import lv_solve
from postsbc.rng import substream
from postsbc.runner import ExperimentConfig, run_experiment
from postsbc.sampler.diagnostics import ess_bulk, split_rhat
from postsbc.sbc import SbcConfig, prior_sbc
from postsbc.uniformity import band_check, null_coverage, pit_ecdf_diff, simultaneous_band

CONFIGS = files("postsbc").joinpath("configs")


def shipped(name: str, **overrides) -> ExperimentConfig:
    return ExperimentConfig.from_file(CONFIGS.joinpath(f"{name}.json"), **overrides)


def record(rp, n: int, title: str, detail: str) -> None:
    rp("criterion", f"{n} ({title})")
    rp("detail", detail)


def verdicts(report: dict) -> dict[str, str]:
    return {q: e["verdict"] for q, e in report["quantities"].items()}


def _run(tmp_path_factory, name: str):
    return run_experiment(shipped(name), output_dir=tmp_path_factory.mktemp(name))


# -- 1 -------------------------------------------------------------------------


def test_criterion_1_null_calibration(record_property):
    t0 = time.perf_counter()
    env = simultaneous_band(300, 100)
    inside = {"theta": 0, "loglik": 0}
    reps = 200
    for r in range(reps):
        ens = prior_sbc(NormalModel(), SbcConfig(iterations=300, ranks_S=100, seed=1000 + r, backend=ExactConjugateBackend()))
        for q in inside:
            inside[q] += band_check(pit_ecdf_diff(ens.ranks(q), 100), env).passed
    rates = {q: c / reps for q, c in inside.items()}
    elapsed = time.perf_counter() - t0
    record(record_property, 1, "null calibration", f"inside-band rates {rates}, {elapsed:.0f} s")
    assert all(v >= 0.93 for v in rates.values())
    assert elapsed < 120


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_degeneracy(tmp_path, record_property):
    t0 = time.perf_counter()
    prior = run_experiment(shipped("normal_prior_exact"), output_dir=tmp_path / "prior")
    post = run_experiment(shipped("normal_posterior_empty"), output_dir=tmp_path / "post")
    same = (prior.run_dir / "ranks.csv").read_bytes() == (post.run_dir / "ranks.csv").read_bytes()
    elapsed = time.perf_counter() - t0
    record(record_property, 2, "empty-data degeneracy", f"ranks.csv identical={same}, {elapsed:.0f} s")
    assert same
    assert elapsed < 60


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_bias_detection(record_property):
    t0 = time.perf_counter()
    env = simultaneous_band(300, 100)
    hits = 0
    reps = 100
    for r in range(reps):
        ens = prior_sbc(NormalModel(), SbcConfig(iterations=300, ranks_S=100, seed=2000 + r, backend=ShiftedConjugateBackend(0.5)))
        v = band_check(pit_ecdf_diff(ens.ranks("theta"), 100), env)
        p = v.primary()
        hits += (not v.passed) and p.region == "left" and p.direction == "down"
    elapsed = time.perf_counter() - t0
    record(record_property, 3, "bias detection power", f"{hits}/{reps} left-region downward FAILs, {elapsed:.0f} s")
    assert hits >= 95
    assert elapsed < 300


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_band_coverage(record_property):
    t0 = time.perf_counter()
    envs = {n: simultaneous_band(n, 100) for n in (100, 250, 500)}
    cov = {n: null_coverage(env, 10_000, seed=4000 + n) for n, env in envs.items()}
    w250 = envs[250].upper - envs[250].lower
    w500 = envs[500].upper - envs[500].lower
    # both grids are u_k = k / 101; the last point is pinned at zero width
    shrinks = np.array_equal(envs[250].grid, envs[500].grid) and bool(np.all(w500[:-1] < w250[:-1]))
    elapsed = time.perf_counter() - t0
    record(record_property, 4, "band coverage", f"coverage {cov}, width shrinks 250->500={shrinks}, {elapsed:.0f} s")
    assert all(0.94 <= c <= 0.96 for c in cov.values())
    assert shrinks
    assert elapsed < 180


# -- 5 and 6 -------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_funnel_pattern(tmp_path_factory, record_property):
    centered = _run(tmp_path_factory, "hier_centered_tau006_sigma196").report
    noncentered = _run(tmp_path_factory, "hier_noncentered_tau006_sigma196").report
    tau = centered["quantities"]["tau"]
    left_down = [e for e in tau["excursions"] if e["region"] == "left" and e["direction"] == "down"]
    nc = verdicts(noncentered)
    record(
        record_property, 5, "funnel pattern",
        f"centered tau {tau['verdict']} (left/down excursions {len(left_down)}, max {tau['max_excursion']:.4f}); "
        f"non-centered {noncentered['summary']} {nc}",
    )
    assert tau["verdict"] == "FAIL" and left_down
    assert all(v == "PASS" for v in nc.values())


@pytest.mark.slow
def test_criterion_6_mirror_regime(tmp_path_factory, record_property):
    centered = _run(tmp_path_factory, "hier_centered_tau196_sigma006").report
    noncentered = _run(tmp_path_factory, "hier_noncentered_tau196_sigma006").report
    nc_notes = {
        q: (e["verdict"], round(e.get("max_excursion", 0.0), 4), [(x["region"], x["direction"]) for x in e.get("excursions", [])])
        for q, e in noncentered["quantities"].items()
        if q in ("mu0", "tau")
    }
    record(
        record_property, 6, "mirror regime",
        f"centered {centered['summary']}; non-centered (reported only) {noncentered['summary']} {nc_notes}",
    )
    assert all(v == "PASS" for v in verdicts(centered).values())


# -- 7 -------------------------------------------------------------------------


def test_criterion_7_ode_correctness(record_property):
    t0 = time.perf_counter()
    p = LvParams(*PELT_PARAMS)
    traj = lv_solve(p, np.arange(0.0, 20.0 + 1e-9, 0.01), h=0.01)
    v = np.array([lv_invariant(s, p) for s in traj.states])
    drift = float(np.max(np.abs(v - v[0])) / abs(v[0]))
    obs = np.arange(0.0, 21.0)
    ref = lv_solve(p, obs, h=0.001).states
    err = [float(np.max(np.abs(lv_solve(p, obs, h=h).states - ref))) for h in (0.02, 0.01)]
    ratio = err[0] / err[1]
    elapsed = time.perf_counter() - t0
    record(record_property, 7, "ODE correctness", f"relative drift {drift:.2e}, halving ratio {ratio:.2f}, {elapsed:.1f} s")
    assert drift < 1e-6
    assert 12 <= ratio <= 20
    assert elapsed < 10


# -- 8 -------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_lv_smoke(tmp_path_factory, record_property):
    out = _run(tmp_path_factory, "lv_posterior_smoke")
    loglik = out.report["quantities"]["loglik"]
    per_iter = out.report["wall_clock"]["mean_seconds_per_iteration"]
    lines = (out.run_dir / "iterations.jsonl").read_text().splitlines()
    record(
        record_property, 8, "LV posterior SBC smoke",
        f"loglik {loglik['verdict']} ({out.report['summary']}), {per_iter} s per iteration, "
        f"{out.report['iterations']}",
    )
    assert loglik["verdict"] == "PASS"
    assert per_iter is not None and len(lines) == out.report["N_expected"]
    assert LotkaVolterraModel().dim == 8


# -- 9 -------------------------------------------------------------------------


def _ar1(phi, n, chains, rng):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains) / np.sqrt(1 - phi**2)
    eps = rng.standard_normal((chains, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + eps[:, t]
    return x


def test_criterion_9_diagnostics(record_property):
    t0 = time.perf_counter()
    rng = substream(9000)
    iid = rng.standard_normal((4, 1000))
    sep = np.vstack([rng.standard_normal(1000), 2 + rng.standard_normal(1000)])
    ar = _ar1(0.9, 5000, 4, rng)
    expected_ar = ar.size * 0.1 / 1.9
    r_iid, r_sep = split_rhat(iid), split_rhat(sep)
    e_iid, e_ar = ess_bulk(iid), ess_bulk(ar)
    elapsed = time.perf_counter() - t0
    record(
        record_property, 9, "diagnostics",
        f"R-hat iid {r_iid:.4f}, separated {r_sep:.4f}; ESS iid {e_iid:.0f}/4000, AR(1) {e_ar:.0f} vs {expected_ar:.0f}, {elapsed:.1f} s",
    )
    assert r_iid < 1.01 and r_sep > 1.5
    assert abs(e_iid - 4000) / 4000 < 0.2
    assert expected_ar / 1.5 <= e_ar <= expected_ar * 1.5
    assert elapsed < 30


# -- 10 ------------------------------------------------------------------------


def test_criterion_10_determinism_and_resume(tmp_path, record_property):
    t0 = time.perf_counter()
    outputs = {}
    for name in ("normal_prior_exact", "normal_posterior_empty"):
        for w in (1, 4, 8):
            out = run_experiment(shipped(name, workers=w), output_dir=tmp_path / f"{name}_w{w}")
            outputs[(name, w)] = (out.run_dir / "ranks.csv").read_bytes()
        cfg = shipped(name, workers=4)
        part = tmp_path / f"{name}_resumed"
        run_experiment(cfg, stop_after=120, output_dir=part)
        run_experiment(cfg, resume=True, output_dir=part)
        outputs[(name, "resume")] = (part / "ranks.csv").read_bytes()
    identical = {
        name: len({v for (n, _), v in outputs.items() if n == name}) == 1
        for name in ("normal_prior_exact", "normal_posterior_empty")
    }
    elapsed = time.perf_counter() - t0
    record(record_property, 10, "determinism and resume", f"byte-identical across workers 1/4/8 and resume: {identical}, {elapsed:.0f} s")
    assert all(identical.values())
    assert elapsed < 120
