import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdlink.channel import ChannelState, DriftModel, classical_fringe, drift_preset
from hdlink.core import wrap_phase
from hdlink.stabiliser import (
    FitPriors,
    FringeSource,
    TimingBudget,
    analytic_scaling_fidelity,
    apply_corrections,
    build_plan,
    characterize_priors,
    decay_after_correction,
    error_scaling_study,
    fit_fringe,
    fringe_error_study,
    fringe_model,
    hadamard_fidelity,
    infer_offsets,
    inference_matrix,
    run_session,
    scan_points,
)


def as_set(pairs):
    return {tuple(p) for p in pairs}


def true_pair_offsets(plan, phases):
    # a pair's offset is the phase of its higher mode relative to its lower mode
    return [phases[max(p)] - phases[min(p)] for p in plan.round1], [phases[max(p)] - phases[min(p)] for p in plan.round2]


class TestFitFringe:
    def test_noiseless_recovery(self):
        x = scan_points(1.5)
        y = fringe_model(x, 0.7, 1.0, 0.0, 1.0)
        fit = fit_fringe(np.column_stack([x, y]), FitPriors.exact())
        assert fit.ok
        assert fit.offset == pytest.approx(0.7, abs=1e-9)

    def test_free_fit_recovers_all_parameters(self):
        x = np.linspace(0, 2 * np.pi, 12, endpoint=False)
        fit = fit_fringe(np.column_stack([x, fringe_model(x, -2.1, 0.8, 0.05, 1.0)]))
        assert (fit.offset, fit.p_max, fit.p_min, fit.nu) == pytest.approx((-2.1, 0.8, 0.05, 1.0), abs=1e-8)

    @given(st.floats(min_value=-np.pi + 1e-6, max_value=np.pi), st.floats(min_value=0.9, max_value=1.1))
    @settings(max_examples=50, deadline=None)
    def test_noiseless_any_offset(self, offset, nu):
        priors = FitPriors(1.0, 0.02, 0.0, 0.01, 1.0, 0.05)
        x = scan_points(1.5)
        fit = fit_fringe(np.column_stack([x, fringe_model(x, offset, 1.0, 0.0, nu)]), priors)
        assert abs(wrap_phase(fit.offset - offset)) <= 1e-9

    def test_matches_channel_readout(self):
        ch = ChannelState.ideal(2, [0.3, -1.4])
        x = scan_points(1.5)
        p = classical_fringe(ch, (0, 1), x, port="bright")
        fit = fit_fringe(np.column_stack([x, p]), FitPriors.exact())
        assert fit.offset == pytest.approx(wrap_phase(-1.4 - 0.3), abs=1e-9)

    def test_constant_scan_flagged(self):
        x = scan_points(1.5)
        fit = fit_fringe(np.column_stack([x, np.full(4, 0.4)]), FitPriors.exact())
        assert not fit.ok

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_fringe([[0, 1], [1, 0.5], [2, 0.1]])

    def test_span_too_small(self):
        with pytest.raises(ValueError):
            fit_fringe(np.column_stack([np.linspace(0, 0.01, 4), [1, 0.9, 0.8, 0.7]]))

    def test_zero_width_prior_holds_parameter(self):
        x = scan_points(1.5)
        y = fringe_model(x, 0.2, 1.0, 0.0, 1.0) * 1.01
        fit = fit_fringe(np.column_stack([x, y]), FitPriors.exact())
        assert (fit.p_max, fit.p_min, fit.nu) == (1.0, 0.0, 1.0)


class TestPriors:
    def test_noiseless(self):
        p = characterize_priors(FringeSource(), rng_seed=0)
        assert max(p.p_max_std, p.p_min_std, p.nu_std) < 1e-8
        assert p.p_max_mean == pytest.approx(1.0)

    def test_coverage(self):
        rng = np.random.default_rng(7)
        system = FringeSource(p_max=1.0, p_min=0.02, nu=1.0, noise_rel=0.02)
        hits = 0
        trials = 40
        for _ in range(trials):
            lo, hi = characterize_priors(system, rng_seed=rng).bounds()
            hits += bool(np.all((lo <= [1.0, 0.02, 1.0]) & ([1.0, 0.02, 1.0] <= hi)))
        assert hits >= 0.95 * trials

    @pytest.mark.parametrize("n", [0, 1])
    def test_insufficient(self, n):
        with pytest.raises(ValueError):
            characterize_priors(FringeSource(), n_fringes=n)

    def test_negative_std(self):
        with pytest.raises(ValueError):
            FitPriors(1, -0.1, 0, 0, 1, 0)


class TestPlan:
    def test_d4(self):
        plan = build_plan(4)
        assert as_set(plan.round1) == {(0, 1), (2, 3)}
        assert as_set(plan.round2) == {(1, 2), (3, 0)}

    def test_d2(self):
        plan = build_plan(2)
        assert as_set(plan.round1) == {(0, 1)} and plan.round2 == ()
        assert plan.rounds == 1

    @pytest.mark.parametrize("d", range(2, 17))
    def test_rounds_are_matchings(self, d):
        plan = build_plan(d)
        for rnd in (plan.round1, plan.round2):
            modes = [m for p in rnd for m in p]
            assert len(modes) == len(set(modes))

    @pytest.mark.parametrize("d", range(2, 17))
    def test_connected_and_depth(self, d):
        depths = build_plan(d).depths()
        assert set(depths) == set(range(d))
        # even d closes a ring through (d-1, 0); odd d leaves a chain hanging off mode 0
        bound = d // 2 if d % 2 == 0 else max(d - 2, 1)
        assert max(depths.values()) == bound

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_one_addition_for_small_d(self, d):
        assert max(build_plan(d).depths().values()) <= 2

    def test_two_matchings_cannot_reach_six_modes_in_two_hops(self):
        # union of two matchings has degree <= 2, so at most 1 + 2 + 2 modes lie within two hops of mode 0
        assert 1 + 2 + 2 < 6
        assert max(build_plan(6).depths().values()) == 3

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_plan(1)


class TestInferOffsets:
    def test_additive_chain(self):
        got = infer_offsets([0.1, 0.3], [0.2, 0.6], build_plan(4))
        assert got == pytest.approx([0.1, 0.3, 0.6])

    def test_zero(self):
        assert np.all(infer_offsets([0, 0], [0, 0], build_plan(4)) == 0)

    @pytest.mark.parametrize("d", range(2, 17))
    def test_exact_inputs(self, d):
        plan = build_plan(d)
        phases = np.random.default_rng(d).uniform(-np.pi, np.pi, d)
        r1, r2 = true_pair_offsets(plan, phases)
        got = infer_offsets(r1, r2, plan)
        assert np.max(np.abs(wrap_phase(got - (phases[1:] - phases[0])))) <= 1e-12

    def test_dict_input(self):
        plan = build_plan(4)
        got = infer_offsets({(0, 1): 0.1, (2, 3): 0.3}, {(1, 2): 0.2, (0, 3): 0.6}, plan)
        assert got == pytest.approx([0.1, 0.3, 0.6])

    def test_missing_pair(self):
        with pytest.raises(ValueError):
            infer_offsets({(0, 1): 0.1}, {(1, 2): 0.2, (0, 3): 0.6}, build_plan(4))

    def test_worst_case_chain_bound(self):
        d, eps = 8, 0.05
        plan = build_plan(d)
        A = inference_matrix(plan)
        errors = np.random.default_rng(1).uniform(-eps, eps, (10_000, len(plan.pairs)))
        inferred = errors @ A.T
        assert np.max(np.abs(inferred)) <= eps * d / 2 + 1e-12
        # Gaussian errors: each inferred offset accumulates one variance per hop
        gauss = np.random.default_rng(2).normal(0, eps, (10_000, len(plan.pairs))) @ A.T
        depth = np.array([plan.depths()[n] for n in range(1, d)])
        assert np.allclose(gauss.std(axis=0), eps * np.sqrt(depth), rtol=0.05)

    def test_inference_matrix_matches_infer(self):
        plan = build_plan(7)
        vals = np.random.default_rng(3).uniform(-0.3, 0.3, len(plan.pairs))
        got = infer_offsets(vals[: len(plan.round1)], vals[len(plan.round1):], plan)
        assert np.allclose(got, inference_matrix(plan) @ vals)


class TestCorrections:
    def test_exact(self):
        ch = ChannelState.ideal(4, [0.2, -1.0, 2.5, 0.7])
        fixed = apply_corrections(ch, ch.phases[1:] - ch.phases[0])
        assert np.max(np.abs(fixed.residual_phases())) <= 1e-12

    def test_error_shows_as_residual(self):
        ch = ChannelState.ideal(4, [0.2, -1.0, 2.5, 0.7])
        err = np.array([0.01, -0.02, 0.03])
        fixed = apply_corrections(ch, ch.phases[1:] - ch.phases[0] + err)
        assert np.allclose(fixed.residual_phases(), -err, atol=1e-12)

    def test_end_to_end_noiseless(self):
        ch = ChannelState.ideal(4, np.random.default_rng(9).uniform(-np.pi, np.pi, 4))
        trace = run_session(ch, DriftModel(), duration=1.0, rng_seed=0)
        assert trace.fidelities("stabilise")[0] == pytest.approx(1.0, abs=1e-9)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            apply_corrections(ChannelState.ideal(4), [0.0, 0.0])


class TestTiming:
    def test_reference_budget(self):
        b = TimingBudget()
        assert b.iteration_time(build_plan(4)) == pytest.approx(0.94)
        assert b.duty_cycle(build_plan(4)) == pytest.approx(0.2 / 1.14)
        assert round(b.duty_cycle(build_plan(4)), 3) == 0.175

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 5), st.integers(2, 12))
    def test_closed_form(self, ts, tm, tf, tq, d):
        b = TimingBudget(ts, tm, tf, tq)
        plan = build_plan(d)
        steps = plan.rounds * (ts + 4 * tm + tf) + ts
        assert abs(b.duty_cycle(plan) - tq / (tq + steps)) <= 1e-12

    def test_negative(self):
        with pytest.raises(ValueError):
            TimingBudget(t_fit=-1)


class TestSession:
    def test_zero_drift(self):
        trace = run_session(ChannelState.ideal(4), DriftModel(), duration=10.0, rng_seed=1, stabilise=False)
        assert np.all(trace.fidelities() == pytest.approx(1.0))

    def test_disabled_collapses_under_drift(self):
        ch = ChannelState.ideal(4, np.random.default_rng(0).uniform(-np.pi, np.pi, 4))
        off = run_session(ch, drift_preset("scf", 4), duration=600.0, rng_seed=2, stabilise=False)
        assert 0.1 < off.mean_fidelity < 0.4

    def test_stabilised_under_drift(self):
        ch = ChannelState.ideal(4, np.random.default_rng(0).uniform(-np.pi, np.pi, 4))
        on = run_session(ch, drift_preset("scf+mcf", 4), duration=30.0, rng_seed=2)
        assert on.mean_fidelity > 0.98
        assert on.aborted_iterations == 0

    def test_duty_cycle_and_schedule(self):
        budget = TimingBudget()
        trace = run_session(ChannelState.ideal(4), DriftModel(), budget=budget, duration=5.0, rng_seed=0)
        assert trace.duty_cycle == pytest.approx(budget.duty_cycle(build_plan(4)), abs=1e-12)
        times = [r[0] for r in trace.rows if r[1] == "quantum"]
        assert np.allclose(np.diff(times), 1.14)

    def test_callback_and_csv(self):
        seen = []
        trace = run_session(ChannelState.ideal(3), DriftModel(), duration=3.0, rng_seed=0,
                            quantum_callback=lambda ch, t: seen.append(t) or t)
        assert len(seen) == len(trace.fidelities()) == len(trace.callback_results)
        header = trace.to_csv().splitlines()[0]
        assert header == "t_seconds,window_type,fidelity,residual_phase_1,residual_phase_2"

    def test_deterministic(self):
        ch = ChannelState.ideal(4, [0.1, 0.5, -2.0, 1.0])
        a = run_session(ch, drift_preset("scf", 4), duration=8.0, rng_seed=5).to_csv()
        b = run_session(ch, drift_preset("scf", 4), duration=8.0, rng_seed=5).to_csv()
        assert a == b

    def test_decay_curve(self):
        ch = ChannelState.ideal(4, [0.1, 0.5, -2.0, 1.0])
        curve = decay_after_correction(ch, drift_preset("scf", 4), duration=20.0, dt=1.0, rng_seed=0)
        assert curve[0, 1] == pytest.approx(1.0)
        assert curve.shape == (21, 2)
        assert curve[-1, 1] < 1.0


class TestHadamardFidelity:
    def test_values(self):
        assert hadamard_fidelity([0.0, 0.0, 0.0]) == pytest.approx(1.0)
        assert hadamard_fidelity([np.pi]) == pytest.approx(0.0, abs=1e-15)
        assert hadamard_fidelity([np.pi / 2]) == pytest.approx(0.5)


class TestScalingStudy:
    def test_zero_error(self):
        rows = error_scaling_study([2, 4, 8, 16], [0.0], trials=100)
        assert all(r["mean_fidelity"] == 1.0 for r in rows)

    def test_analytic_oracle(self):
        # d=4 by hand: r1 = e01, r3 = e03, r2 = e01 + e12, so Var(r_n - r_m) / sigma^2 over the
        # six mode pairs is (1, 2, 1, 1, 2, 3) and F = (4 + 2 sum exp(-v sigma^2 / 2)) / 16
        for sigma, model in ((0.2, "std"), (0.2 * math.sqrt(math.pi / 2), "mean_abs")):
            by_hand = (4 + 2 * sum(math.exp(-v * sigma**2 / 2) for v in (1, 2, 1, 1, 2, 3))) / 16
            assert analytic_scaling_fidelity(4, 0.2, model) == pytest.approx(by_hand, abs=1e-12)
        assert analytic_scaling_fidelity(4, 0.2, "std") == pytest.approx(0.975492, abs=1e-6)
        assert analytic_scaling_fidelity(4, 0.2) == pytest.approx(0.961935, abs=1e-6)
        for d, eps in [(2, 0.1), (4, 0.2), (5, 0.3), (8, 0.2)]:
            for model in ("mean_abs", "std"):
                row = error_scaling_study([d], [eps], trials=20_000, rng_seed=3, error_model=model)[0]
                sem = row["std_fidelity"] / math.sqrt(20_000)
                assert abs(row["mean_fidelity"] - analytic_scaling_fidelity(d, eps, model)) < 4 * sem

    def test_monotone_in_d(self):
        rows = error_scaling_study([2, 3, 4, 5, 6, 8, 12, 16], [0.1, 0.2, 0.3], trials=10_000, rng_seed=1)
        for eps in (0.1, 0.2, 0.3):
            col = [r["mean_fidelity"] for r in rows if r["epsilon"] == eps]
            assert all(a >= b for a, b in zip(col, col[1:]))

    def test_small_epsilon_limit(self):
        trials = 2_000
        row = error_scaling_study([8], [1e-4], trials=trials)[0]
        assert abs(row["mean_fidelity"] - 1) <= 3 / math.sqrt(trials)

    def test_sorted_and_validated(self):
        rows = error_scaling_study([4, 2], [0.2, 0.0], trials=10)
        assert [(r["d"], r["epsilon"]) for r in rows] == [(2, 0.0), (2, 0.2), (4, 0.0), (4, 0.2)]
        with pytest.raises(ValueError):
            error_scaling_study([4], [0.1], trials=0)
        with pytest.raises(ValueError):
            error_scaling_study([], [0.1])
        with pytest.raises(ValueError):
            error_scaling_study([4], [0.1], error_model="var")


class TestFringeErrorStudy:
    def test_wider_spacing_helps(self):
        err = fringe_error_study([0.25, 1.5], noise_rel=0.01, trials=150, rng_seed=4)
        assert err[1] < err[0]
