"""Multimode phase stabilisation.

Two rounds of pairwise classical fringe scans per iteration, four-point
fits with characterised priors, offset-chain inference back to mode 0 and
correction of the receiver phase shifters. Also the timing budget,
interleaved session simulation and the error-scaling study.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .channel import LAMBDA_PUMP, LAMBDA_SIGNAL, ChannelState, DriftModel, classical_fringe, step_drift
from .core import wrap_phase
from .rng import as_rng, derive_rng

DEFAULT_SPACING = 1.5
MIN_SPAN = 0.1
DEGENERATE_CONTRAST = 1e-6


# ---------------------------------------------------------------- fringes


@dataclass(frozen=True)
class FringeFit:
    """Fitted fringe P(x) = p_max cos^2((nu x + offset)/2) + p_min.

    ``offset`` is the phase the fringe carries at zero drive, wrapped to
    (-pi, pi]. ``ok`` is False for degenerate or diverged fits.
    """

    offset: float
    p_max: float
    p_min: float
    nu: float
    residual: float
    ok: bool = True

    @property
    def x0(self) -> float:
        """Drive value at the fringe maximum nearest zero."""
        return -self.offset / self.nu


def fringe_model(x, offset: float, p_max: float, p_min: float, nu: float):
    return p_max * np.cos((nu * np.asarray(x, dtype=float) + offset) / 2) ** 2 + p_min


@dataclass(frozen=True)
class FitPriors:
    p_max_mean: float
    p_max_std: float
    p_min_mean: float
    p_min_std: float
    nu_mean: float
    nu_std: float
    multipliers: tuple[float, float, float] = (3.0, 2.0, 2.0)

    def __post_init__(self):
        if min(self.p_max_std, self.p_min_std, self.nu_std) < 0:
            raise ValueError("prior standard deviations must be non-negative")
        if self.nu_mean <= 0:
            raise ValueError("nu must be positive")

    @classmethod
    def exact(cls, p_max: float = 1.0, p_min: float = 0.0, nu: float = 1.0) -> "FitPriors":
        return cls(p_max, 0.0, p_min, 0.0, nu, 0.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds for (p_max, p_min, nu)."""
        mean = np.array([self.p_max_mean, self.p_min_mean, self.nu_mean])
        half = np.array(self.multipliers) * np.array([self.p_max_std, self.p_min_std, self.nu_std])
        lo = np.maximum(mean - half, [0.0, 0.0, 1e-9])
        return lo, np.maximum(mean + half, lo)


def _linear_guess(x, y, nu):
    # y = c0 + c1 cos(nu x) + c2 sin(nu x)
    A = np.column_stack([np.ones_like(x), np.cos(nu * x), np.sin(nu * x)])
    (c0, c1, c2), *_ = np.linalg.lstsq(A, y, rcond=None)
    amp = math.hypot(c1, c2)
    return math.atan2(-c2, c1), 2 * amp, max(c0 - amp, 0.0), amp


def fit_fringe(scan, priors: FitPriors | None = None, min_span: float = MIN_SPAN,
               residual_threshold: float = 0.1) -> FringeFit:
    """Bounded least-squares fit of a fringe scan of ``(drive, power)`` rows.

    With priors, (p_max, p_min, nu) start at the prior means and are bounded
    by mean +- (3, 2, 2) standard deviations; a parameter with zero prior
    width is held fixed. Without priors all three are free.
    """
    data = np.asarray(scan, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 4:
        raise ValueError("need at least 4 (drive, power) points")
    x, y = data[:, 0], data[:, 1]
    if np.ptp(x) < min_span:
        raise ValueError(f"drive span {np.ptp(x):.3g} below the minimum {min_span}")

    nu0 = 1.0 if priors is None else priors.nu_mean
    off0, pmax0, pmin0, amp = _linear_guess(x, y, nu0)
    scale = max(float(np.max(np.abs(y))), 1e-300)
    if amp <= DEGENERATE_CONTRAST * scale:
        return FringeFit(float("nan"), 0.0, float(np.mean(y)), nu0, float("inf"), ok=False)

    if priors is None:
        lo = np.array([0.0, 0.0, 1e-9])
        hi = np.array([np.inf, np.inf, np.inf])
        start = np.array([pmax0, pmin0, nu0])
    else:
        lo, hi = priors.bounds()
        start = np.array([priors.p_max_mean, priors.p_min_mean, priors.nu_mean])
    free = hi > lo
    fixed = np.where(free, 0.0, lo)
    start = np.clip(start, lo, hi)

    def unpack(p):
        full = fixed.copy()
        full[free] = p[1:]
        return p[0], full

    def resid(p):
        off, (pmax, pmin, nu) = unpack(p)
        return fringe_model(x, off, pmax, pmin, nu) - y

    p0 = np.concatenate([[off0], start[free]])
    lb = np.concatenate([[-np.inf], lo[free]])
    ub = np.concatenate([[np.inf], hi[free]])
    res = least_squares(resid, p0, bounds=(lb, ub), method="dogbox", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    off, (pmax, pmin, nu) = unpack(res.x)
    rms = float(np.sqrt(np.mean(res.fun**2)))
    ok = bool(np.isfinite(rms)) and rms <= residual_threshold * scale
    return FringeFit(float(wrap_phase(off)), float(pmax), float(pmin), float(nu), rms, ok)


@dataclass(frozen=True)
class FringeSource:
    """A bench fringe with fixed shape and multiplicative readout noise."""

    p_max: float = 1.0
    p_min: float = 0.0
    nu: float = 1.0
    noise_rel: float = 0.0

    def scan(self, x, offset: float, rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = fringe_model(x, offset, self.p_max, self.p_min, self.nu)
        if self.noise_rel > 0:
            p = np.clip(p * (1 + self.noise_rel * as_rng(rng).standard_normal(p.shape)), 0.0, None)
        return p


def characterize_priors(system: FringeSource, n_fringes: int = 30, points_per_fringe: int = 24,
                        rng_seed=None) -> FitPriors:
    """Estimate prior means and spreads from densely sampled fringes.

    Each fringe has a random offset and is fitted with all parameters free.
    """
    if n_fringes < 2:
        raise ValueError("need at least 2 fringes to estimate spreads")
    if points_per_fringe < 5:
        raise ValueError("dense characterisation needs at least 5 points per fringe")
    rng = as_rng(rng_seed)
    x = np.linspace(0, 2 * np.pi / system.nu, points_per_fringe, endpoint=False)
    params = []
    for _ in range(n_fringes):
        fit = fit_fringe(np.column_stack([x, system.scan(x, rng.uniform(-np.pi, np.pi), rng)]))
        if fit.ok:
            params.append((fit.p_max, fit.p_min, fit.nu))
    if len(params) < 2:
        raise ValueError("too few usable characterisation fringes")
    p = np.array(params)
    mean, std = p.mean(axis=0), p.std(axis=0, ddof=1)
    return FitPriors(mean[0], std[0], mean[1], std[1], mean[2], std[2])


def scan_points(spacing: float = DEFAULT_SPACING, n_points: int = 4, center: float = 0.0) -> np.ndarray:
    return center + spacing * (np.arange(n_points) - (n_points - 1) / 2)


def fringe_error_study(spacings, noise_rel: float = 0.01, trials: int = 1000, rng_seed=0,
                       system: FringeSource | None = None, n_points: int = 4) -> np.ndarray:
    """Mean absolute offset error of four-point fits versus point spacing.

    Priors are characterised once from the same noisy system; every trial
    draws a fresh uniform true offset.
    """
    system = system or FringeSource(p_max=1.0, p_min=0.01, nu=1.0, noise_rel=noise_rel)
    priors = characterize_priors(system, rng_seed=derive_rng(0 if rng_seed is None else rng_seed, "priors"))
    out = []
    for s in spacings:
        rng = derive_rng(0 if rng_seed is None else rng_seed, "fringe-error", repr(float(s)))
        x = scan_points(s, n_points)
        errs = []
        for _ in range(trials):
            true = rng.uniform(-np.pi, np.pi)
            fit = fit_fringe(np.column_stack([x, system.scan(x, true, rng)]), priors, min_span=0.0)
            errs.append(abs(wrap_phase(fit.offset - true)) if fit.ok else np.pi)
        out.append(float(np.mean(errs)))
    return np.array(out)


# ---------------------------------------------------------------- planning


@dataclass(frozen=True)
class StabilisationPlan:
    """Pairs scanned in each round; the reference mode is 0.

    The offset attached to a pair is always the phase of its higher mode
    relative to its lower mode.
    """

    d: int
    round1: tuple[tuple[int, int], ...]
    round2: tuple[tuple[int, int], ...]

    @property
    def rounds(self) -> int:
        return 1 if not self.round2 else 2

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return self.round1 + self.round2

    def depths(self) -> dict[int, int]:
        """Number of measured offsets summed to reach each mode from mode 0."""
        return {n: len(path) for n, path in _paths(self).items()}


def build_plan(d: int) -> StabilisationPlan:
    """Round 1 pairs (n, n+1) for even n; round 2 pairs (n+1, n+2) closing the ring.

    For even d round 2 wraps with (d-1, 0). For odd d the last mode is left
    out of round 1 and measured directly against mode 0 in round 2.
    """
    if d < 2:
        raise ValueError("need d >= 2")
    round1 = tuple((n, n + 1) for n in range(0, d - 1, 2))
    round2 = []
    if d % 2 == 0:
        for n in range(0, d, 2):
            pair = (n + 1, (n + 2) % d)
            if pair[0] != pair[1] and tuple(sorted(pair)) not in {tuple(sorted(p)) for p in round1 + tuple(round2)}:
                round2.append(pair)
    else:
        for n in range(0, d - 1, 2):
            if n + 2 < d - 1:
                round2.append((n + 1, n + 2))
        round2.append((d - 1, 0))
    return StabilisationPlan(d, round1, tuple(round2))


def _paths(plan: StabilisationPlan) -> dict[int, list[tuple[int, int]]]:
    """Shortest signed path of measured pairs from mode 0, round-1 edges first."""
    adj: dict[int, list[tuple[int, tuple[int, int], int]]] = {n: [] for n in range(plan.d)}
    for k, (a, b) in enumerate(plan.pairs):
        lo, hi = min(a, b), max(a, b)
        adj[lo].append((hi, (lo, hi), +1))
        adj[hi].append((lo, (lo, hi), -1))
    paths: dict[int, list] = {0: []}
    queue = deque([0])
    while queue:
        n = queue.popleft()
        for m, pair, sign in adj[n]:
            if m not in paths:
                paths[m] = paths[n] + [(pair, sign)]
                queue.append(m)
    return paths


def _pair_values(fits, pairs) -> dict[tuple[int, int], float]:
    if isinstance(fits, dict):
        items = fits.items()
    else:
        fits = list(fits)
        if len(fits) != len(pairs):
            raise ValueError(f"expected {len(pairs)} fits, got {len(fits)}")
        items = zip(pairs, fits)
    out = {}
    for pair, f in items:
        value = f.offset if isinstance(f, FringeFit) else float(f)
        out[(min(pair), max(pair))] = value
    return out


def infer_offsets(round1, round2, plan: StabilisationPlan) -> np.ndarray:
    """Offsets of modes 1..d-1 relative to mode 0 from the measured pairs.

    ``round1`` and ``round2`` are sequences aligned with the plan's pairs
    (FringeFit or plain offsets) or dicts keyed by pair.
    """
    values = _pair_values(round1, plan.round1)
    values.update(_pair_values(round2, plan.round2))
    missing = [p for p in plan.pairs if (min(p), max(p)) not in values]
    if missing:
        raise ValueError(f"missing fits for pairs {missing}")
    paths = _paths(plan)
    if len(paths) != plan.d:
        raise ValueError("plan does not connect every mode to mode 0")
    out = np.zeros(plan.d - 1)
    for n in range(1, plan.d):
        acc = 0.0
        for pair, sign in paths[n]:
            acc = wrap_phase(acc + sign * values[pair])
        out[n - 1] = acc
    return out


def inference_matrix(plan: StabilisationPlan) -> np.ndarray:
    """Signed matrix A with inferred offsets = A @ measured pair offsets (before wrapping)."""
    index = {(min(p), max(p)): k for k, p in enumerate(plan.pairs)}
    A = np.zeros((plan.d - 1, len(plan.pairs)))
    for n, path in _paths(plan).items():
        for pair, sign in path:
            A[n - 1, index[pair]] += sign
    return A


def apply_corrections(channel: ChannelState, offsets) -> ChannelState:
    """Set the receiver phase shifters to theta_n = -Delta_{0,n}."""
    offsets = np.asarray(offsets, dtype=float)
    if offsets.size != channel.d - 1:
        raise ValueError(f"need {channel.d - 1} offsets")
    return channel.evolve(corrections=np.concatenate([[0.0], -offsets]))


def hadamard_fidelity(residuals) -> np.ndarray | float:
    """Classical H+ fidelity |sum_n exp(i r_n)|^2 / d^2 with r_0 = 0.

    Accepts residuals of modes 1..d-1 with shape (..., d-1).
    """
    r = np.asarray(residuals, dtype=float)
    d = r.shape[-1] + 1
    s = 1 + np.sum(np.exp(1j * r), axis=-1)
    f = np.abs(s) ** 2 / d**2
    return float(f) if np.ndim(f) == 0 else f


# ---------------------------------------------------------------- timing


@dataclass(frozen=True)
class TimingBudget:
    t_set_config: float = 0.12
    t_measure_point: float = 0.06
    t_fit: float = 0.05
    t_quantum_window: float = 0.2
    points_per_fringe: int = 4

    def __post_init__(self):
        if min(self.t_set_config, self.t_measure_point, self.t_fit, self.t_quantum_window) < 0:
            raise ValueError("times must be non-negative")
        if self.points_per_fringe < 4:
            raise ValueError("a fringe fit needs at least 4 points")

    def round_time(self) -> float:
        return self.t_set_config + self.points_per_fringe * self.t_measure_point + self.t_fit

    def iteration_time(self, plan: StabilisationPlan) -> float:
        """Rounds of scanning plus switching back to the quantum configuration."""
        return plan.rounds * self.round_time() + self.t_set_config

    def duty_cycle(self, plan: StabilisationPlan) -> float:
        return self.t_quantum_window / (self.t_quantum_window + self.iteration_time(plan))


# ---------------------------------------------------------------- session


@dataclass
class SessionTrace:
    d: int
    stabilised: bool
    duty_cycle: float
    rows: list[tuple[float, str, float, tuple[float, ...]]] = field(default_factory=list)
    callback_results: list = field(default_factory=list, repr=False)
    aborted_iterations: int = 0

    def fidelities(self, window_type: str = "quantum") -> np.ndarray:
        return np.array([r[2] for r in self.rows if r[1] == window_type])

    @property
    def mean_fidelity(self) -> float:
        return float(np.mean(self.fidelities()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_seconds", "window_type", "fidelity"] + [f"residual_phase_{n}" for n in range(1, self.d)])
        for t, kind, f, res in self.rows:
            w.writerow([repr(float(t)), kind, repr(float(f))] + [repr(float(x)) for x in res])
        return buf.getvalue()


class _Clock:
    """Advances a channel under drift on simulated time."""

    def __init__(self, channel: ChannelState, drift: DriftModel, rng):
        self.channel = channel
        self.drift = drift
        self.rng = rng

    def wait(self, dt: float):
        if dt > 0:
            self.channel = step_drift(self.channel, self.drift, dt, self.rng)


def _stabilisation_iteration(clock: _Clock, plan: StabilisationPlan, budget: TimingBudget,
                             priors: FitPriors, x: np.ndarray, noise_rel: float, rng,
                             wavelength: float) -> np.ndarray | None:
    fits: dict[tuple[int, int], FringeFit] = {}
    for pairs in (plan.round1, plan.round2):
        if not pairs:
            continue
        clock.wait(budget.t_set_config)
        for attempt in range(2):
            powers = np.zeros((len(pairs), x.size))
            for k, xk in enumerate(x):
                clock.wait(budget.t_measure_point)
                for j, (a, b) in enumerate(pairs):
                    lo, hi = min(a, b), max(a, b)
                    powers[j, k] = classical_fringe(clock.channel, (lo, hi), xk, wavelength, "bright",
                                                    noise_rel, rng)
            clock.wait(budget.t_fit)
            round_fits = [fit_fringe(np.column_stack([x, powers[j]]), priors, min_span=0.0)
                          for j in range(len(pairs))]
            if all(f.ok for f in round_fits):
                break
        else:
            return None
        for pair, f in zip(pairs, round_fits):
            fits[(min(pair), max(pair))] = f
    return infer_offsets(fits, {}, plan)


def _residuals(channel: ChannelState, wavelength: float) -> np.ndarray:
    return channel.residual_phases(wavelength)


def run_session(channel: ChannelState, drift: DriftModel, plan: StabilisationPlan | None = None,
                budget: TimingBudget | None = None, quantum_callback=None, duration: float = 60.0,
                stabilise: bool = True, rng_seed=None, priors: FitPriors | None = None,
                spacing: float = DEFAULT_SPACING, substeps: int = 4,
                signal_wavelength: float = LAMBDA_SIGNAL,
                pump_wavelength: float = LAMBDA_PUMP) -> SessionTrace:
    """Alternate stabilisation iterations and quantum windows on simulated time.

    With ``stabilise=False`` the same schedule runs but corrections are never
    applied. Each quantum window reports the mean classical H+ fidelity over
    ``substeps`` sub-intervals and the residual phases at its end.
    ``quantum_callback(channel, t)`` is called once per window and its
    return values are collected.
    """
    plan = plan or build_plan(channel.d)
    budget = budget or TimingBudget()
    if plan.d != channel.d:
        raise ValueError("plan and channel dimensions differ")
    if duration <= 0 or substeps < 1:
        raise ValueError("need positive duration and at least one substep")
    rng = as_rng(rng_seed)
    noise = drift.readout_noise_rel
    if priors is None:
        priors = FitPriors.exact() if noise == 0 else characterize_priors(FringeSource(noise_rel=noise),
                                                                          rng_seed=rng)
    x = scan_points(spacing, budget.points_per_fringe)
    clock = _Clock(channel, drift, rng)
    trace = SessionTrace(channel.d, stabilise, budget.duty_cycle(plan))
    t0 = channel.t
    while clock.channel.t - t0 < duration - 1e-12:
        if stabilise:
            offsets = _stabilisation_iteration(clock, plan, budget, priors, x, noise, rng, pump_wavelength)
            if offsets is None:
                trace.aborted_iterations += 1
            else:
                clock.channel = apply_corrections(clock.channel, offsets)
        else:
            # same schedule; the scans would never be used
            clock.wait(budget.iteration_time(plan) - budget.t_set_config)
        clock.wait(budget.t_set_config)
        res = _residuals(clock.channel, signal_wavelength)
        trace.rows.append((clock.channel.t - t0, "stabilise", hadamard_fidelity(res), tuple(res)))

        fids = []
        for _ in range(substeps):
            clock.wait(budget.t_quantum_window / substeps)
            fids.append(hadamard_fidelity(_residuals(clock.channel, signal_wavelength)))
        if quantum_callback is not None:
            trace.callback_results.append(quantum_callback(clock.channel, clock.channel.t))
        res = _residuals(clock.channel, signal_wavelength)
        trace.rows.append((clock.channel.t - t0, "quantum", float(np.mean(fids)), tuple(res)))
    return trace


def decay_after_correction(channel: ChannelState, drift: DriftModel, duration: float = 30.0, dt: float = 0.5,
                           rng_seed=None, wavelength: float = LAMBDA_SIGNAL) -> np.ndarray:
    """Fidelity versus time after one exact correction with no further feedback.

    Returns rows of (seconds since correction, fidelity).
    """
    if dt <= 0 or duration <= 0:
        raise ValueError("need positive duration and step")
    rng = as_rng(rng_seed)
    eff = channel.effective_phases(wavelength) - channel.corrections
    ch = apply_corrections(channel, wrap_phase(eff[1:] - eff[0]))
    rows = [(0.0, hadamard_fidelity(_residuals(ch, wavelength)))]
    for k in range(1, int(round(duration / dt)) + 1):
        ch = step_drift(ch, drift, dt, rng)
        rows.append((k * dt, hadamard_fidelity(_residuals(ch, wavelength))))
    return np.array(rows)


# ---------------------------------------------------------------- scaling study


ERROR_MODELS = ("mean_abs", "std")


def error_scaling_study(d_list, eps_list, trials: int = 10_000, rng_seed=0,
                        error_model: str = "mean_abs") -> list[dict]:
    """Mean classical H+ fidelity after inference from noisy pair offsets.

    Every measured pair offset carries an independent Gaussian error. With
    ``error_model="mean_abs"`` the scale ``eps`` is the mean absolute error
    (std = eps * sqrt(pi/2)); with ``"std"`` it is the standard deviation.
    Rows are sorted by (d, eps).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if error_model not in ERROR_MODELS:
        raise ValueError(f"error_model must be one of {ERROR_MODELS}")
    d_list, eps_list = sorted(set(int(d) for d in d_list)), sorted(set(float(e) for e in eps_list))
    if not d_list or not eps_list:
        raise ValueError("need non-empty d and epsilon lists")
    scale = math.sqrt(math.pi / 2) if error_model == "mean_abs" else 1.0
    rows = []
    for d in d_list:
        plan = build_plan(d)
        A = inference_matrix(plan)
        for eps in eps_list:
            if eps < 0:
                raise ValueError("epsilon must be non-negative")
            rng = derive_rng(0 if rng_seed is None else rng_seed, "scaling", d, repr(eps))
            errors = rng.standard_normal((trials, len(plan.pairs))) * eps * scale
            # measured = true + error, corrections remove the true part
            fid = hadamard_fidelity(-(errors @ A.T))
            fid = np.atleast_1d(fid)
            rows.append(dict(d=d, epsilon=eps, mean_fidelity=float(fid.mean()),
                             std_fidelity=float(fid.std(ddof=1)) if trials > 1 else 0.0))
    return rows


def analytic_scaling_fidelity(d: int, eps: float, error_model: str = "mean_abs") -> float:
    """Exact mean fidelity for Gaussian pair errors: mean over (n, m) of exp(-Var(r_n - r_m)/2)."""
    sigma = eps * (math.sqrt(math.pi / 2) if error_model == "mean_abs" else 1.0)
    A = np.vstack([np.zeros(len(build_plan(d).pairs)), inference_matrix(build_plan(d))])
    diff = A[:, None, :] - A[None, :, :]
    var = sigma**2 * np.sum(diff**2, axis=-1)
    return float(np.mean(np.exp(-var / 2)))
