"""Inter-chip link: phase drift, loss, path-length mismatch and loss handling.

Phases are per signal mode. The receiver's correction phase shifters are
carried separately in ``ChannelState.corrections`` so that drift and
compensation can be inspected independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import BipartiteState, wrap_phase
from .rng import as_rng

LAMBDA_SIGNAL = 1539.77e-9
LAMBDA_PUMP = 1549.30e-9
LAMBDA_IDLER = 1558.98e-9
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChannelState:
    d: int
    phases: np.ndarray
    transmissivities: np.ndarray
    mismatches: np.ndarray
    attenuator_settings: np.ndarray
    corrections: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        def vec(x, name):
            v = np.asarray(x, dtype=float).reshape(-1)
            if v.size != self.d:
                raise ValueError(f"{name} must have {self.d} entries, got {v.size}")
            return v

        alpha = vec(self.transmissivities, "transmissivities")
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise ValueError("transmissivities must lie in [0, 1]")
        object.__setattr__(self, "phases", wrap_phase(vec(self.phases, "phases")))
        object.__setattr__(self, "transmissivities", alpha)
        object.__setattr__(self, "mismatches", vec(self.mismatches, "mismatches"))
        object.__setattr__(self, "attenuator_settings", vec(self.attenuator_settings, "attenuator_settings"))
        object.__setattr__(self, "corrections", wrap_phase(vec(self.corrections, "corrections")))

    @classmethod
    def ideal(cls, d: int, phases=None) -> "ChannelState":
        """Lossless, length-matched link with unattenuated modes."""
        return cls(
            d=d,
            phases=np.zeros(d) if phases is None else phases,
            transmissivities=np.ones(d),
            mismatches=np.zeros(d),
            attenuator_settings=np.full(d, np.pi),
            corrections=np.zeros(d),
        )

    def evolve(self, **changes) -> "ChannelState":
        return replace(self, **changes)

    @property
    def attenuation(self) -> np.ndarray:
        """Power transmission of each MZI attenuator."""
        return np.sin(self.attenuator_settings / 2) ** 2

    def effective_phases(self, wavelength: float = LAMBDA_SIGNAL) -> np.ndarray:
        """Total per-mode phase seen at ``wavelength`` including corrections."""
        return self.phases + self.corrections + 2 * np.pi * self.mismatches / wavelength

    def residual_phases(self, wavelength: float = LAMBDA_SIGNAL) -> np.ndarray:
        """Effective phases relative to mode 0, wrapped; length d - 1."""
        eff = self.effective_phases(wavelength)
        return wrap_phase(eff[1:] - eff[0])


@dataclass(frozen=True)
class DriftModel:
    """Per-mode Gaussian random walk plus deterministic sinusoids.

    ``sinusoids[n]`` lists ``(frequency_hz, amplitude_rad, phase_rad)`` terms
    for mode n.
    """

    random_walk_sigma: np.ndarray | float = 0.0
    sinusoids: tuple = ()
    readout_noise_rel: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.random_walk_sigma) < 0) or self.readout_noise_rel < 0:
            raise ValueError("drift magnitudes must be non-negative")
        for terms in self.sinusoids:
            for f, a, _ in terms:
                if f < 0 or a < 0:
                    raise ValueError("sinusoid frequency and amplitude must be non-negative")

    def sigma(self, d: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.random_walk_sigma, dtype=float), (d,))

    def deterministic_phase(self, d: int, t: float) -> np.ndarray:
        out = np.zeros(d)
        for n, terms in enumerate(self.sinusoids[:d]):
            for f, a, theta in terms:
                out[n] += a * np.sin(2 * np.pi * f * t + theta)
        return out


# sigma in rad/sqrt(s); the sinusoids emulate slow thermal swings of each fibre
_PRESETS = {
    "noiseless": dict(sigma=0.0, swing=0.0, period=600.0, noise=0.0),
    "onchip": dict(sigma=0.003, swing=0.05, period=300.0, noise=0.005),
    "scf+mcf": dict(sigma=0.06, swing=1.5, period=240.0, noise=0.01),
    "scf": dict(sigma=0.15, swing=3.0, period=120.0, noise=0.01),
}

DRIFT_PRESETS = tuple(_PRESETS)


def drift_preset(name: str, d: int) -> DriftModel:
    """Named drift scenario for a d-mode link.

    Magnitudes are calibration knobs chosen to reproduce the qualitative
    ordering on-chip < scf+mcf < scf, not measured constants.
    """
    try:
        p = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown drift preset {name!r}; choose from {DRIFT_PRESETS}") from None
    sinusoids = tuple(
        ((1.0 / (p["period"] * (1 + 0.37 * n)), p["swing"], 2 * np.pi * n / max(d, 1) + 0.9 * n),)
        if p["swing"] > 0 else ()
        for n in range(d)
    )
    return DriftModel(random_walk_sigma=p["sigma"], sinusoids=sinusoids, readout_noise_rel=p["noise"])


def step_drift(state: ChannelState, model: DriftModel, dt: float, rng_seed=None) -> ChannelState:
    """Advance the channel phases by ``dt`` seconds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = as_rng(rng_seed)
    d = state.d
    sigma = model.sigma(d)
    kick = rng.standard_normal(d) * sigma * np.sqrt(dt) if np.any(sigma > 0) else np.zeros(d)
    sweep = model.deterministic_phase(d, state.t + dt) - model.deterministic_phase(d, state.t)
    return state.evolve(phases=state.phases + kick + sweep, t=state.t + dt)


def apply_channel(state: ChannelState, psi: BipartiteState,
                  wavelength: float = LAMBDA_SIGNAL) -> tuple[BipartiteState, float]:
    """Send the signal half of ``psi`` through the link.

    Returns the renormalised state and the probability that the photon
    survived the link.
    """
    if psi.d != state.d:
        raise ValueError(f"state has {psi.d} signal modes, channel has {state.d}")
    amp = np.sqrt(state.transmissivities * state.attenuation)
    factor = amp * np.exp(1j * state.effective_phases(wavelength))
    out = psi.amplitudes * factor[np.newaxis, :]
    survival = float(np.sum(np.abs(out) ** 2))
    if survival == 0:
        raise ValueError("no amplitude survives the channel")
    return BipartiteState(psi.d, out / np.sqrt(survival)), survival


def classical_fringe(state: ChannelState, modes: tuple[int, int], theta, wavelength: float = LAMBDA_PUMP,
                     port: str = "dark", noise_rel: float = 0.0, rng=None):
    """Normalised power at one output of the MZI formed by two link modes.

    ``theta`` is the analyser phase applied to the second mode. The dark port
    follows sin^2(pi dL / lambda + (theta + Delta)/2) with dL and Delta taken
    second-minus-first; the bright port is its complement.
    """
    n, m = modes
    if n == m:
        raise ValueError("a fringe needs two distinct modes")
    dL = state.mismatches[m] - state.mismatches[n]
    delta = state.phases[m] - state.phases[n]
    arg = np.pi * dL / wavelength + (np.asarray(theta, dtype=float) + delta) / 2
    if port == "dark":
        power = np.sin(arg) ** 2
    elif port == "bright":
        power = np.cos(arg) ** 2
    else:
        raise ValueError(f"port must be 'dark' or 'bright', got {port!r}")
    if noise_rel > 0:
        rng = as_rng(rng)
        power = np.clip(power * (1 + noise_rel * rng.standard_normal(np.shape(power))), 0.0, None)
    return power


def mismatch_phase_difference(delta_L: float, lambda_a: float, lambda_b: float) -> float:
    """Difference of the sin^2 arguments pi*dL/lambda at two wavelengths."""
    return float(np.pi * delta_L * (1 / lambda_a - 1 / lambda_b))


def estimate_mismatch(fit_signal, fit_pump, lambda_s: float = LAMBDA_SIGNAL,
                      lambda_p: float = LAMBDA_PUMP) -> float:
    """Path-length mismatch from the offsets of fringes at two wavelengths.

    The offset difference is wrapped to (-pi, pi], i.e. the branch closest to
    zero mismatch is returned.
    """
    if lambda_s == lambda_p:
        raise ValueError("wavelengths must differ")
    diff = wrap_phase(fit_signal.offset - fit_pump.offset)
    return float(diff / (2 * np.pi * (1 / lambda_s - 1 / lambda_p)))


def balance_losses(efficiencies) -> np.ndarray:
    """Attenuator phases that equalise every mode to the lossiest one."""
    alpha = np.asarray(efficiencies, dtype=float)
    if np.any(alpha <= 0) or np.any(alpha > 1):
        raise ValueError("efficiencies must lie in (0, 1]")
    ratio = np.clip(alpha.min() / alpha, 0.0, 1.0)
    return 2 * np.arcsin(np.sqrt(ratio))


@dataclass(frozen=True)
class DetectorEfficiencies:
    """Relative detector efficiencies; the brightest port is defined as 1."""

    eta: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).reshape(-1)
        if np.any(eta <= 0) or np.any(eta > 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_counts(cls, counts) -> "DetectorEfficiencies":
        c = np.asarray(counts, dtype=float)
        return cls(c / c.max())

    @classmethod
    def ideal(cls, d: int) -> "DetectorEfficiencies":
        return cls(np.ones(d))

    def __len__(self):
        return self.eta.size


def _eta(e, size: int) -> np.ndarray:
    if e is None:
        return np.ones(size)
    eta = e.eta if isinstance(e, DetectorEfficiencies) else np.asarray(e, dtype=float)
    if eta.size != size or np.any(eta <= 0) or np.any(eta > 1):
        raise ValueError(f"need {size} efficiencies in (0, 1]")
    return eta


def correct_efficiencies(counts, eta_a=None, eta_b=None) -> np.ndarray:
    """Outcome probabilities from coincidence counts, undoing detector loss.

    Counts are divided by eta_a * eta_b and the table renormalised.
    """
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    ea = _eta(eta_a, c.shape[0])
    eb = _eta(eta_b, c.shape[1])
    corrected = c / np.outer(ea, eb)
    total = corrected.sum()
    if total <= 0:
        raise ValueError("zero total counts")
    return corrected / total
