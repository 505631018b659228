"""Local-MUB state tomography for N qudits.

Pipeline: simulated (or measured) coincidence counts -> efficiency-corrected
probabilities -> linear reconstruction -> physical T^dagger T estimate ->
fidelity, entanglement entropy and dimension witness, with Monte-Carlo
error bars from Poisson resampling of the counts.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .bases import MUBSet, gellmann_ops, mub_set
from .channel import DetectorEfficiencies
from .core import (
    BipartiteState,
    DensityMatrix,
    PureState,
    dagger,
    entanglement_entropy,
    fidelity,
    max_entangled,
    projector,
)
from .rng import as_rng, spawn

log = logging.getLogger(__name__)


class CoverageError(ValueError):
    """The records do not contain every local-MUB setting."""


@dataclass(frozen=True)
class CountsRecord:
    """Coincidence counts for one measurement setting.

    ``setting`` holds one basis index per party and ``counts`` has shape
    ``(d,) * N`` indexed by the outcome of each party.
    """

    d: int
    setting: tuple[int, ...]
    counts: np.ndarray
    acquisition_time: float = 0.0

    def __post_init__(self):
        setting = tuple(int(m) for m in self.setting)
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (self.d,) * len(setting):
            raise ValueError(f"counts shape {counts.shape} does not match d={self.d}, N={len(setting)}")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and non-negative")
        object.__setattr__(self, "setting", setting)
        object.__setattr__(self, "counts", counts)

    @property
    def N(self) -> int:
        return len(self.setting)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def _party_etas(eta, d: int, N: int) -> list[np.ndarray]:
    if eta is None:
        return [np.ones(d)] * N
    if isinstance(eta, DetectorEfficiencies):
        eta = [eta] * N
    out = []
    for e in eta:
        v = e.eta if isinstance(e, DetectorEfficiencies) else np.asarray(e, dtype=float)
        if v.size != d or np.any(v <= 0) or np.any(v > 1):
            raise ValueError(f"need {d} detector efficiencies in (0, 1] per party")
        out.append(v)
    if len(out) != N:
        raise ValueError(f"need efficiencies for {N} parties, got {len(out)}")
    return out


def _outer(vectors: list[np.ndarray]) -> np.ndarray:
    out = np.ones(())
    for v in vectors:
        out = np.multiply.outer(out, v)
    return out


def record_probabilities(record: CountsRecord, eta=None) -> np.ndarray:
    """Efficiency-corrected outcome probabilities of one record."""
    etas = _party_etas(eta, record.d, record.N)
    corrected = record.counts / _outer(etas)
    total = corrected.sum()
    if total <= 0:
        raise ValueError(f"record {record.setting} has zero counts")
    return corrected / total


def setting_probabilities(state, bases_per_party: list[np.ndarray]) -> np.ndarray:
    """Exact outcome probabilities of ``state`` for one local setting.

    ``state`` may be a state vector, BipartiteState, PureState or density
    matrix. Each basis matrix holds basis kets in its rows.
    """
    d = bases_per_party[0].shape[0]
    N = len(bases_per_party)
    local = np.ones((1, 1), dtype=complex)
    for b in bases_per_party:
        local = np.kron(local, np.conj(b))
    if isinstance(state, BipartiteState):
        state = state.vector
    elif isinstance(state, PureState):
        state = state.amplitudes
    elif isinstance(state, DensityMatrix):
        state = state.matrix
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        probs = np.abs(local @ state) ** 2
    else:
        probs = np.real(np.einsum("ij,jk,ik->i", local, state, np.conj(local)))
    probs = np.clip(probs, 0.0, None)
    return probs.reshape((d,) * N)


def simulate_counts(state, basis_a: np.ndarray, basis_b: np.ndarray | None = None, n_events: float = 1e4,
                    eta=None, rng_seed=None, setting: tuple[int, ...] | None = None,
                    shot_noise: bool = True, acquisition_time: float = 0.0) -> CountsRecord:
    """Coincidence counts for one setting.

    Mean counts are ``n_events * p * eta_a * eta_b``; with ``shot_noise`` each
    cell is an independent Poisson draw, otherwise the mean itself is
    returned.
    """
    if n_events < 0:
        raise ValueError("n_events must be non-negative")
    bases = [basis_a] if basis_b is None else [basis_a, basis_b]
    d = basis_a.shape[0]
    probs = setting_probabilities(state, bases)
    mean = n_events * probs * _outer(_party_etas(eta, d, len(bases)))
    counts = as_rng(rng_seed).poisson(mean).astype(float) if shot_noise else mean
    setting = tuple(setting) if setting is not None else (-1,) * len(bases)
    return CountsRecord(d, setting, counts, acquisition_time)


def all_settings(d: int, N: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(d + 1), repeat=N))


def simulate_tomography(state, d: int, N: int = 2, n_events: float = 1e4, eta=None, rng_seed=None,
                        shot_noise: bool = True, bases: MUBSet | None = None) -> list[CountsRecord]:
    """Records for every local-MUB setting of an N-qudit state."""
    bases = mub_set(d) if bases is None else bases
    rng = as_rng(rng_seed)
    return [
        simulate_counts(state, *[bases.bases[m] for m in s], n_events=n_events, eta=eta, rng_seed=rng,
                        setting=s, shot_noise=shot_noise)
        for s in all_settings(d, N)
    ] if N <= 2 else [
        _simulate_n(state, d, s, n_events, eta, rng, shot_noise, bases) for s in all_settings(d, N)
    ]


def _simulate_n(state, d, setting, n_events, eta, rng, shot_noise, bases):
    probs = setting_probabilities(state, [bases.bases[m] for m in setting])
    mean = n_events * probs * _outer(_party_etas(eta, d, len(setting)))
    counts = rng.poisson(mean).astype(float) if shot_noise else mean
    return CountsRecord(d, setting, counts)


def probability_tensor(records: list[CountsRecord], eta=None) -> np.ndarray:
    """Probabilities indexed by the projector index p = n + m*d of each party.

    Raises CoverageError unless every (d+1)^N setting is present. Repeated
    settings are merged by summing their counts.
    """
    if not records:
        raise CoverageError("no records")
    d, N = records[0].d, records[0].N
    merged: dict[tuple[int, ...], np.ndarray] = {}
    for r in records:
        if r.d != d or r.N != N:
            raise ValueError("records mix dimensions or party counts")
        if any(not 0 <= m <= d for m in r.setting):
            raise ValueError(f"basis index out of range in setting {r.setting}")
        merged[r.setting] = merged.get(r.setting, 0) + r.counts
    missing = [s for s in all_settings(d, N) if s not in merged]
    if missing:
        raise CoverageError(f"{len(missing)} of {(d + 1) ** N} settings missing, e.g. {missing[0]}")
    probs = np.zeros((d + 1, d) * N)
    for s, counts in merged.items():
        p = record_probabilities(CountsRecord(d, s, counts), eta)
        probs[tuple(itertools.chain.from_iterable(zip(s, [slice(None)] * N)))] = p
    # (m1, n1, m2, n2, ...) -> (p1, p2, ...)
    return probs.reshape((d * (d + 1),) * N)


@lru_cache(maxsize=None)
def _frame_coefficients(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients C[i, p] = Tr(Gamma_p sigma_i) and normalised operators sigma_i / Tr(sigma_i^2).

    Row 0 is the identity, whose coefficients are 1/(d+1) for every
    projector since each basis resolves the identity once.
    """
    gammas = mub_set(d).projectors()
    ops = [np.eye(d, dtype=complex)] + list(gellmann_ops(d).operators)
    coeff = np.empty((len(ops), gammas.shape[0]))
    coeff[0] = 1.0 / (d + 1)
    for i, s in enumerate(ops[1:], start=1):
        coeff[i] = np.real(np.einsum("pij,ji->p", gammas, s))
    duals = np.array([op / np.trace(op @ op).real for op in ops])
    return coeff, duals


def _kron_expand(coeffs: np.ndarray, duals: np.ndarray, N: int) -> np.ndarray:
    """sum_i coeffs[i1..iN] duals[i1] (x) ... (x) duals[iN] as a d^N matrix."""
    d = duals.shape[1]
    letters = "abcdefgh"[:N]
    rows = "ijklmnop"[:N]
    cols = "qrstuvwx"[:N]
    subscripts = letters + "," + ",".join(f"{a}{r}{c}" for a, r, c in zip(letters, rows, cols))
    out = np.einsum(f"{subscripts}->{rows}{cols}", coeffs, *([duals] * N), optimize=True)
    return out.reshape(d**N, d**N)


def linear_from_probabilities(probs: np.ndarray, d: int, N: int) -> np.ndarray:
    coeff, duals = _frame_coefficients(d)
    t = probs
    for axis in range(N):
        t = np.moveaxis(np.tensordot(coeff, t, axes=([1], [axis])), 0, axis)
    rho = _kron_expand(t, duals, N)
    rho = 0.5 * (rho + dagger(rho))
    return rho / np.trace(rho).real


def linear_reconstruct(records: list[CountsRecord], eta=None, bases: MUBSet | None = None,
                       N: int | None = None) -> DensityMatrix:
    """Linear-inversion estimate from a complete set of local-MUB records.

    Each generalised Stokes parameter Tr(rho sigma_i1 (x) ... ) is the sum of
    measured probabilities weighted by Tr(Gamma_p sigma_i) per party. The
    result is Hermitian with unit trace but may have negative eigenvalues.
    """
    d = records[0].d
    if bases is not None and bases.d != d:
        raise ValueError("basis set dimension does not match the records")
    if N is not None and N != records[0].N:
        raise ValueError(f"records describe {records[0].N} parties, not {N}")
    probs = probability_tensor(records, eta)
    return DensityMatrix(linear_from_probabilities(probs, d, records[0].N), flag="linear-only")


_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
# basis index of each Pauli eigenbasis in mub_set(2)
_PAULI_SETTING = {"Z": 0, "X": 1, "Y": 2}


def stokes_parameters(records: list[CountsRecord], eta=None) -> dict[str, float]:
    by_setting = {}
    for r in records:
        if r.d != 2 or r.N != 1:
            raise ValueError("Stokes reconstruction takes single-qubit records")
        by_setting[r.setting[0]] = by_setting.get(r.setting[0], 0) + r.counts
    stokes = {"I": 1.0}
    for name, m in _PAULI_SETTING.items():
        if m not in by_setting:
            raise CoverageError(f"missing the {name} setting")
        p = record_probabilities(CountsRecord(2, (m,), by_setting[m]), eta)
        stokes[name] = float(p[0] - p[1])  # eigenvalues +1, -1
    return stokes


def stokes_reconstruct_qubit(records: list[CountsRecord], eta=None) -> DensityMatrix:
    s = stokes_parameters(records, eta)
    rho = 0.5 * sum(s[k] * _PAULI[k] for k in "IXYZ")
    return DensityMatrix(rho, flag="linear-only")


@lru_cache(maxsize=None)
def measurement_operators(d: int, N: int) -> np.ndarray:
    """Stack of all local-MUB projectors Gamma_p for N parties, shape (P, D, D)."""
    gammas = mub_set(d).projectors()
    out = gammas
    for _ in range(N - 1):
        out = np.einsum("aij,bkl->abikjl", out, gammas).reshape(
            out.shape[0] * gammas.shape[0], out.shape[1] * d, out.shape[2] * d)
    out.setflags(write=False)
    return out


def _tril_layout(D: int):
    rows, cols = np.tril_indices(D, -1)
    return np.arange(D), rows, cols


def t_from_params(params: np.ndarray, D: int) -> np.ndarray:
    """Lower-triangular T with real diagonal from D^2 real parameters."""
    diag, rows, cols = _tril_layout(D)
    n_off = rows.size
    T = np.zeros((D, D), dtype=complex)
    T[diag, diag] = params[:D]
    T[rows, cols] = params[D : D + n_off] + 1j * params[D + n_off :]
    return T


def params_from_t(T: np.ndarray) -> np.ndarray:
    D = T.shape[0]
    diag, rows, cols = _tril_layout(D)
    off = T[rows, cols]
    return np.concatenate([T[diag, diag].real, off.real, off.imag])


def rho_from_params(params: np.ndarray, D: int) -> np.ndarray:
    T = t_from_params(params, D)
    A = dagger(T) @ T
    return A / np.trace(A).real


def initial_params(rho_lin: np.ndarray, regularization: float = 1e-10) -> np.ndarray:
    """t-parameters of the PSD-clipped linear estimate."""
    D = rho_lin.shape[0]
    w, v = np.linalg.eigh(0.5 * (rho_lin + dagger(rho_lin)))
    rho0 = (v * np.clip(w, 0.0, None)) @ dagger(v)
    rho0 = rho0 / np.trace(rho0).real + regularization * np.eye(D)
    # rho0 = T^dagger T with T lower triangular: Cholesky of the index-reversed matrix
    J = np.eye(D)[::-1]
    L = np.linalg.cholesky(J @ rho0 @ J)
    T = dagger(J @ L @ J)
    return params_from_t(T)


class CostFunction:
    """L(t) = sum_p (Tr(Gamma_p rho(t)) - q_p)^2 with analytic gradient."""

    def __init__(self, gammas: np.ndarray, target: np.ndarray):
        self.D = gammas.shape[1]
        self.flat = gammas.reshape(gammas.shape[0], -1)
        # Tr(G rho) = sum_ij G_ji rho_ij = conj(G).ravel() . rho.ravel() for Hermitian G
        self.flat_t = np.conj(self.flat)
        self.target = np.asarray(target, dtype=float)

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(self.flat_t @ rho.reshape(-1))

    def value(self, params: np.ndarray) -> float:
        r = self.probabilities(rho_from_params(params, self.D)) - self.target
        return float(r @ r)

    def __call__(self, params: np.ndarray) -> tuple[float, np.ndarray]:
        D = self.D
        T = t_from_params(params, D)
        A = dagger(T) @ T
        tr = np.trace(A).real
        rho = A / tr
        r = self.probabilities(rho) - self.target
        M = (2 * (r @ self.flat)).reshape(D, D)
        Mp = (M - np.trace(M @ rho) * np.eye(D)) / tr
        K = (Mp @ dagger(T)).T
        diag, rows, cols = _tril_layout(D)
        grad = np.concatenate([2 * K[diag, diag].real, 2 * K[rows, cols].real, -2 * K[rows, cols].imag])
        return float(r @ r), grad


@dataclass
class EstimateResult:
    rho: DensityMatrix
    cost: float
    converged: bool
    iterations: int
    cost_history: list[float] = field(default_factory=list, repr=False)


def physical_estimate(rho_linear, d: int, N: int, probabilities: np.ndarray | None = None,
                      max_iter: int = 5000, tol: float = 1e-12) -> EstimateResult:
    """Closest physical state T^dagger T / Tr(T^dagger T) in measurement statistics.

    By default the fit targets Tr(Gamma_p rho_lin); pass the measured
    ``probabilities`` (flattened in projector order) to fit those instead.
    Minimised with L-BFGS-B from the PSD-clipped linear estimate.
    """
    rho_lin = rho_linear.matrix if isinstance(rho_linear, DensityMatrix) else np.asarray(rho_linear, complex)
    D = rho_lin.shape[0]
    if D != d**N:
        raise ValueError(f"matrix size {D} does not match d={d}, N={N}")
    gammas = measurement_operators(d, N)
    cost = CostFunction(gammas, np.zeros(gammas.shape[0]))
    target = cost.probabilities(rho_lin) if probabilities is None else np.asarray(probabilities, float).reshape(-1)
    cost.target = target

    x0 = initial_params(rho_lin)
    history = [cost.value(x0)]
    res = minimize(cost, x0, jac=True, method="L-BFGS-B",
                   callback=lambda xk: history.append(cost.value(xk)),
                   options=dict(maxiter=max_iter, ftol=tol, gtol=tol * 1e-2, maxcor=20))
    x = res.x if res.fun <= history[0] else x0
    converged = bool(res.success) or res.fun <= 1e-20
    if not converged:
        warnings.warn(f"physical estimate did not converge: {res.message}", RuntimeWarning, stacklevel=2)
    rho = rho_from_params(x, D)
    rho = 0.5 * (rho + dagger(rho))
    return EstimateResult(DensityMatrix(rho / np.trace(rho).real), float(min(res.fun, history[0])),
                          converged, int(res.nit), history)


def witness_value(probs_b, probs_b2) -> float:
    """1/B with B = sum_{n_b, n_b'} (sum_{n_a} sqrt(P_{a,b} P_{a,b'}))^2.

    Both tables are indexed ``[n_a, n_b]`` for a fixed basis on party a.
    """
    pb = np.asarray(probs_b, dtype=float)
    pb2 = np.asarray(probs_b2, dtype=float)
    pb, pb2 = pb / pb.sum(), pb2 / pb2.sum()
    inner = np.einsum("ab,ac->bc", np.sqrt(pb), np.sqrt(pb2))
    B = float(np.sum(inner**2))
    if B <= 0:
        raise ValueError("witness undefined: B = 0")
    return 1.0 / B


def dimension_witness(record_b, record_b2, eta=None, tol: float = 1e-9) -> int:
    """Certified minimum local dimension, ceil(1/B).

    Accepts two CountsRecords sharing party a's basis (and differing on
    party b's) or two probability tables.
    """
    if isinstance(record_b, CountsRecord):
        if record_b.setting[0] != record_b2.setting[0] or record_b.setting[1] == record_b2.setting[1]:
            raise ValueError("need one basis on party a and two distinct bases on party b")
        pb, pb2 = record_probabilities(record_b, eta), record_probabilities(record_b2, eta)
    else:
        pb, pb2 = record_b, record_b2
    return int(math.ceil(witness_value(pb, pb2) - tol))


def witness_from_state(rho, d: int, m_a: int = 0, m_b: int = 0, m_b2: int = 1) -> int:
    b = mub_set(d).bases
    return dimension_witness(setting_probabilities(rho, [b[m_a], b[m_b]]),
                             setting_probabilities(rho, [b[m_a], b[m_b2]]))


@dataclass
class MonteCarloErrors:
    fidelity_std: float
    entropy_std: float
    witness_std: float
    fidelities: np.ndarray = field(repr=False)
    entropies: np.ndarray = field(repr=False)
    witnesses: np.ndarray = field(repr=False)


@dataclass
class TomographyResult:
    rho_linear: DensityMatrix
    rho_physical: DensityMatrix
    fidelity: float
    entropy: float | None
    dimension_witness: int | None
    cost: float
    converged: bool
    errors: MonteCarloErrors | None = None
    witness_raw: float | None = None

    @property
    def fidelity_std(self) -> float | None:
        return None if self.errors is None else self.errors.fidelity_std

    @property
    def entropy_std(self) -> float | None:
        return None if self.errors is None else self.errors.entropy_std


def _target_density(target, D: int) -> np.ndarray:
    if target is None:
        d = int(round(np.sqrt(D)))
        return projector(max_entangled(d))
    if isinstance(target, DensityMatrix):
        return target.matrix
    if isinstance(target, BipartiteState):
        return target.density().matrix
    t = np.asarray(target, dtype=complex)
    return projector(t) if t.ndim == 1 else t


def state_metrics(rho: np.ndarray, d: int, N: int, target=None) -> tuple[float, float | None]:
    f = fidelity(rho, _target_density(target, rho.shape[0]))
    return f, (entanglement_entropy(rho, d) if N == 2 else None)


def records_witness(records: list[CountsRecord], eta=None, m_a: int = 0, m_b: int = 0,
                    m_b2: int = 1) -> tuple[int | None, float | None]:
    """Witness from the measured (m_a; m_b, m_b2) records, capped at the local dimension.

    Returns (certified dimension, raw 1/B). A raw value above d can only come
    from counting noise, so the integer is capped at d. Returns (None, None)
    when either record is missing.
    """
    if records[0].N != 2:
        return None, None
    d = records[0].d
    merged: dict[tuple[int, ...], np.ndarray] = {}
    for r in records:
        if r.setting in ((m_a, m_b), (m_a, m_b2)):
            merged[r.setting] = merged.get(r.setting, 0) + r.counts
    if len(merged) < 2:
        return None, None
    pb = record_probabilities(CountsRecord(d, (m_a, m_b), merged[(m_a, m_b)]), eta)
    pb2 = record_probabilities(CountsRecord(d, (m_a, m_b2), merged[(m_a, m_b2)]), eta)
    raw = witness_value(pb, pb2)
    return min(int(math.ceil(raw - 1e-9)), d), raw


def _estimate_from_records(records, eta, d, N, target, fit_measured: bool):
    probs = probability_tensor(records, eta)
    rho_lin = linear_from_probabilities(probs, d, N)
    est = physical_estimate(rho_lin, d, N, probabilities=probs.reshape(-1) if fit_measured else None)
    return rho_lin, est


def monte_carlo_errors(records: list[CountsRecord], eta=None, reps: int = 1000, rng_seed=0, target=None,
                       fit_measured: bool = False) -> MonteCarloErrors:
    """Standard deviations of the state metrics under Poisson resampling.

    Every count is redrawn from a Poisson distribution with the measured
    count as its mean; the full reconstruction is repeated per draw.
    """
    if reps < 2:
        raise ValueError("need at least 2 repetitions")
    d, N = records[0].d, records[0].N
    fids, ents, wits = [], [], []
    for rng in spawn(rng_seed, reps):
        resampled = [CountsRecord(r.d, r.setting, rng.poisson(r.counts).astype(float), r.acquisition_time)
                     for r in records]
        if any(r.total == 0 for r in resampled):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, est = _estimate_from_records(resampled, eta, d, N, target, fit_measured)
        f, e = state_metrics(est.rho.matrix, d, N, target)
        w, _ = records_witness(resampled, eta)
        fids.append(f)
        ents.append(np.nan if e is None else e)
        wits.append(np.nan if w is None else w)
    fids, ents, wits = map(np.asarray, (fids, ents, wits))

    def std(x):
        return float(np.std(x, ddof=1)) if np.all(np.isfinite(x)) and x.size > 1 else float("nan")

    return MonteCarloErrors(std(fids), std(ents), std(wits), fids, ents, wits)


def reconstruct(records: list[CountsRecord], eta=None, target=None, mc_reps: int = 0, rng_seed=0,
                fit_measured: bool = False) -> TomographyResult:
    """Full pipeline from counts to metrics, with optional Monte-Carlo errors."""
    d, N = records[0].d, records[0].N
    rho_lin, est = _estimate_from_records(records, eta, d, N, target, fit_measured)
    f, e = state_metrics(est.rho.matrix, d, N, target)
    w, raw = records_witness(records, eta)
    errors = monte_carlo_errors(records, eta, mc_reps, rng_seed, target, fit_measured) if mc_reps >= 2 else None
    return TomographyResult(DensityMatrix(rho_lin, flag="linear-only"), est.rho, f, e, w, est.cost,
                            est.converged, errors, raw)
