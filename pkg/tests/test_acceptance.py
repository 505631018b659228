"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``[ACCEPTANCE n] PASS|FAIL`` line (outside pytest's
capture) before asserting. Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import itertools
import time

import numpy as np
import pytest

from hdlink.bases import gellmann_ops, measurement_counts, mub_set, verify_two_mode_support
from hdlink.cli import ScenarioConfig, cmd_scaling, cmd_stabilise, tomography_pipeline
from hdlink.core import BipartiteState, max_entangled, min_eigenvalue, random_density
from hdlink.stabiliser import TimingBudget, build_plan, fringe_error_study
from hdlink.tomography import linear_reconstruct, monte_carlo_errors, reconstruct, simulate_tomography

PHI4 = BipartiteState(4, max_entangled(4))


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[ACCEPTANCE {number:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def test_01_error_scaling(report, tmp_path):
    cfg = ScenarioConfig(out=tmp_path, scaling_d=[4], scaling_eps=[0.2])
    start = time.perf_counter()
    (row,) = cmd_scaling(cfg, 10_000)
    elapsed = time.perf_counter() - start
    ok = abs(row["mean_fidelity"] - 0.95) <= 0.02 and elapsed < 10
    report(1, ok, f"d=4 eps=0.2 mean fidelity {row['mean_fidelity']:.4f} (0.95 +/- 0.02), {elapsed:.1f} s")


def test_02_stabilisation_benefit(report, tmp_path):
    cfg = ScenarioConfig(out=tmp_path, preset="scf", duration=600.0)
    start = time.perf_counter()
    summary = cmd_stabilise(cfg)
    elapsed = time.perf_counter() - start
    on, off = summary["mean_fidelity_on"], summary["mean_fidelity_off"]
    ok = on >= 0.93 and off <= 0.40 and elapsed < 30
    report(2, ok, f"scf: stabilised {on:.4f} (>= 0.93), unstabilised {off:.4f} (<= 0.40), {elapsed:.1f} s")


def test_03_duty_cycle(report):
    budget = TimingBudget(t_quantum_window=0.2)
    plan = build_plan(4)
    iteration = budget.iteration_time(plan)
    duty = budget.duty_cycle(plan)
    ok = abs(iteration - 0.94) <= 1e-12 and abs(duty - 0.175) <= 0.001
    report(3, ok, f"iteration {iteration:.3f} s, duty cycle {100 * duty:.2f}% (17.5 +/- 0.1%)")


def test_04_tomography_oracle(report):
    start = time.perf_counter()
    worst = 0.0
    for d, N in itertools.product((2, 3, 4), (1, 2)):
        rng = np.random.default_rng(100 * d + N)
        for _ in range(100):
            rho = random_density(d**N, rng)
            records = simulate_tomography(rho, d, N, n_events=1.0, shot_noise=False)
            worst = max(worst, float(np.max(np.abs(linear_reconstruct(records).matrix - rho))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    report(4, ok, f"max element error {worst:.2e} over 600 states (<= 1e-9), {elapsed:.1f} s")


def test_05_noiseless_ququart(report, tmp_path):
    cfg = ScenarioConfig(out=tmp_path, preset="noiseless", initial_phases="zero", shot_noise=False, mc_reps=0)
    start = time.perf_counter()
    _, res = tomography_pipeline(cfg)
    elapsed = time.perf_counter() - start
    ok = res.fidelity >= 0.999 and res.entropy >= 0.999 and res.dimension_witness == 4 and elapsed < 60
    report(5, ok, f"F {res.fidelity:.6f}, E {res.entropy:.6f}, witness {res.dimension_witness}, {elapsed:.1f} s")


def test_06_dephasing_limit(report, tmp_path):
    cfg = ScenarioConfig(out=tmp_path, mode="dephased", mc_reps=0)
    start = time.perf_counter()
    _, res = tomography_pipeline(cfg)
    elapsed = time.perf_counter() - start
    ok = 0.20 <= res.fidelity <= 0.30 and elapsed < 120
    report(6, ok, f"dephased fidelity {res.fidelity:.4f} in [0.20, 0.30], {elapsed:.1f} s")


def test_07_mub_validity(report):
    worst = 0.0
    for d in (2, 3, 4, 5):
        bases = mub_set(d).bases
        for a, b in itertools.combinations(range(d + 1), 2):
            ov = np.abs(bases[a].conj() @ bases[b].T) ** 2
            worst = max(worst, float(np.max(np.abs(ov - 1 / d))))
    report(7, worst <= 1e-10, f"max cross-basis overlap deviation {worst:.2e} (<= 1e-10)")


def test_08_two_mode_support(report):
    results = {d: verify_two_mode_support(gellmann_ops(d), tol=1e-10) for d in range(2, 9)}
    report(8, all(results.values()), f"two-mode support for d=2..8: {results}")


def test_09_fringe_plateau(report):
    e05, e15, e20 = fringe_error_study([0.5, 1.5, 2.0], noise_rel=0.01, trials=1000, rng_seed=0)
    ok = abs(e15 - e20) <= 0.1 * e20 and e15 < e05
    report(9, ok, f"mean |error| 0.5: {e05:.5f}, 1.5: {e15:.5f}, 2.0: {e20:.5f} (1.5 within 10% of 2.0, below 0.5)")


def test_10_measurement_counts(report):
    got = measurement_counts(4, 2)
    report(10, got == (25, 225, 17), f"(d=4, N=2) -> {got} (25, 225, 17)")


def test_11_estimator_robustness(report):
    start = time.perf_counter()
    good = 0
    fids = []
    for seed in range(50):
        res = reconstruct(simulate_tomography(PHI4, 4, 2, n_events=1e4, rng_seed=seed))
        fids.append(res.fidelity)
        good += res.fidelity >= 0.99 and min_eigenvalue(res.rho_physical.matrix) >= -1e-9
    elapsed = time.perf_counter() - start
    ok = good >= 0.95 * 50 and elapsed < 300
    report(11, ok, f"{good}/50 runs with F >= 0.99 and physical rho (need >= 48); "
                   f"F mean {np.mean(fids):.5f}, min {np.min(fids):.5f}, {elapsed:.1f} s")


def test_12_monte_carlo_entropy_std(report):
    records = simulate_tomography(PHI4, 4, 2, n_events=1e4, rng_seed=0)
    start = time.perf_counter()
    err = monte_carlo_errors(records, reps=100, rng_seed=1)
    elapsed = time.perf_counter() - start
    ok = 5e-4 <= err.entropy_std <= 5e-3
    report(12, ok, f"entropy std {err.entropy_std:.2e} in [5e-4, 5e-3] (100 reps, {elapsed:.1f} s); "
                   f"fidelity std {err.fidelity_std:.2e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
