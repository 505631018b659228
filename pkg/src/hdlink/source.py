"""Photon-pair source model: state preparation, brightness and RHOM fringes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .core import BipartiteState


@dataclass(frozen=True)
class SourceConfig:
    d: int
    magnitudes: np.ndarray
    phases: np.ndarray
    indistinguishability: np.ndarray | None = None

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=float).reshape(-1)
        phases = np.asarray(self.phases, dtype=float).reshape(-1)
        if mags.size != self.d or phases.size != self.d:
            raise ValueError(f"expected {self.d} magnitudes and phases")
        if np.any(mags < 0):
            raise ValueError("magnitudes must be non-negative")
        if abs(np.sum(mags**2) - 1.0) > 1e-12:
            raise ValueError(f"magnitudes are not normalised: sum |a|^2 = {np.sum(mags**2)!r}")
        x = np.eye(self.d) if self.indistinguishability is None else np.asarray(self.indistinguishability, float)
        if x.shape != (self.d, self.d) or not np.allclose(x, x.T) or not np.allclose(np.diag(x), 1.0):
            raise ValueError("indistinguishability must be symmetric with unit diagonal")
        if np.any(x < 0) or np.any(x > 1):
            raise ValueError("indistinguishability entries must lie in [0, 1]")
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "indistinguishability", x)

    @classmethod
    def balanced(cls, d: int, phases=None) -> "SourceConfig":
        return cls(d, np.full(d, 1 / np.sqrt(d)), np.zeros(d) if phases is None else phases)


def prepare_bell_like(config: SourceConfig) -> BipartiteState:
    """sum_n |a_n| e^{i phi_n} |nn>."""
    amps = np.diag(config.magnitudes * np.exp(1j * config.phases))
    return BipartiteState(config.d, amps)


@dataclass(frozen=True)
class BrightnessFit:
    eta_s: float
    eta_i: float
    gamma_eff: float
    beta_s: float
    beta_i: float
    B_s: float
    B_i: float
    B_si: float
    residual: float = field(default=0.0, compare=False)


def pair_rates(P: float, fit: BrightnessFit) -> tuple[float, float, float]:
    """Singles (signal, idler) and coincidence rates at pump power ``P``."""
    if P < 0:
        raise ValueError("pump power must be non-negative")
    s_s = fit.eta_s * fit.gamma_eff * P**2 + fit.beta_s * P + fit.B_s
    s_i = fit.eta_i * fit.gamma_eff * P**2 + fit.beta_i * P + fit.B_i
    c_si = fit.eta_s * fit.eta_i * fit.gamma_eff * P**2 + fit.B_si
    return s_s, s_i, c_si


def fit_brightness(samples) -> BrightnessFit:
    """Fit singles and coincidences vs pump power with non-negative quadratics.

    ``samples`` is a sequence of ``(P, S_s, S_i, C_si)`` rows.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 4:
        raise ValueError("samples must be rows of (P, S_s, S_i, C_si)")
    P = data[:, 0]
    if np.unique(P).size < 4:
        raise ValueError("need at least 4 distinct pump powers (rank-deficient sample set)")
    quad = np.column_stack([P**2, P, np.ones_like(P)])
    (a_s, b_s, c_s), r_s = nnls(quad, data[:, 1])
    (a_i, b_i, c_i), r_i = nnls(quad, data[:, 2])
    (a_c, c_c), r_c = nnls(quad[:, [0, 2]], data[:, 3])

    # a_s = eta_s*g, a_i = eta_i*g, a_c = eta_s*eta_i*g
    if a_c > 0 and a_s > 0 and a_i > 0:
        gamma = a_s * a_i / a_c
        eta_s, eta_i = a_c / a_i, a_c / a_s
    else:
        gamma = eta_s = eta_i = 0.0
    return BrightnessFit(eta_s, eta_i, gamma, b_s, b_i, c_s, c_i, c_c,
                         residual=float(np.sqrt(r_s**2 + r_i**2 + r_c**2)))


def rhom_fringe(phi, x: float) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Reversed-HOM coincidence fringe and the classical fringe at the same phase.

    Both are normalised to a peak of 1. Distinguishable photons add a flat
    floor (1 - x)/2, so the quantum fringe visibility equals ``x``.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("indistinguishability must lie in [0, 1]")
    phi = np.asarray(phi, dtype=float)
    coinc = (x * np.sin(phi) ** 2 + (1 - x) / 2) / ((1 + x) / 2)
    classical = np.cos(phi / 2) ** 2
    if coinc.ndim == 0:
        return float(coinc), float(classical)
    return coinc, classical


def visibility(samples) -> float:
    s = np.asarray(samples, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("no fringe samples")
    if np.any(s < 0):
        raise ValueError("fringe samples must be non-negative")
    hi, lo = s.max(), s.min()
    if hi + lo == 0:
        raise ValueError("visibility undefined for an all-zero fringe")
    return float((hi - lo) / (hi + lo))
