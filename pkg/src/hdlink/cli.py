"""Command-line front end.

Every command reads an optional INI config, derives all randomness from one
master seed and writes plot-ready CSV/JSON into the output directory.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import serialize
from .bases import measurement_counts, mub_set
from .channel import DRIFT_PRESETS, ChannelState, DriftModel, apply_channel, drift_preset
from .rng import derive_rng
from .source import SourceConfig, prepare_bell_like, rhom_fringe, visibility
from .stabiliser import (
    ERROR_MODELS,
    FitPriors,
    TimingBudget,
    build_plan,
    decay_after_correction,
    error_scaling_study,
    fit_fringe,
    fringe_error_study,
    run_session,
)
from .tomography import CountsRecord, TomographyResult, all_settings, reconstruct, setting_probabilities

log = logging.getLogger("hdlink")

OUT_ENV = "HDLINK_OUT"
ACQUISITION_MODES = ("stabilised", "unstabilised", "dephased")
# dephased windows are cheap and need many draws for the phase average to settle;
# the other modes simulate a full stabilisation session per window
DEFAULT_WINDOWS = {"stabilised": 10, "unstabilised": 10, "dephased": 500}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


@dataclass
class ScenarioConfig:
    d: int = 4
    seed: int = 0
    out: Path = Path("out")
    preset: str = "scf"
    drift: DriftModel | None = None
    initial_phases: str = "random"
    duration: float = 600.0
    spacing: float = 1.5
    magnitudes: list[float] | None = None
    phases: list[float] | None = None
    eta_a: list[float] | None = None
    eta_b: list[float] | None = None
    timing: TimingBudget = field(default_factory=TimingBudget)
    events_per_setting: float = 1e4
    windows_per_setting: int | None = None
    mode: str = "stabilised"
    shot_noise: bool = True
    mc_reps: int = 100
    fit_measured: bool = False
    scaling_d: list[int] = field(default_factory=lambda: [2, 3, 4, 5, 6, 8, 16])
    scaling_eps: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.3])
    error_model: str = "mean_abs"
    trials: int = 1

    def validate(self) -> "ScenarioConfig":
        if self.d < 2:
            raise ConfigError("d must be at least 2")
        if self.preset not in DRIFT_PRESETS:
            raise ConfigError(f"unknown drift preset {self.preset!r}; choose from {DRIFT_PRESETS}")
        if self.initial_phases not in ("random", "zero"):
            raise ConfigError("initial_phases must be 'random' or 'zero'")
        if self.mode not in ACQUISITION_MODES:
            raise ConfigError(f"mode must be one of {ACQUISITION_MODES}")
        if self.error_model not in ERROR_MODELS:
            raise ConfigError(f"error_model must be one of {ERROR_MODELS}")
        for name in ("magnitudes", "phases", "eta_a", "eta_b"):
            v = getattr(self, name)
            if v is not None and len(v) != self.d:
                raise ConfigError(f"{name} needs {self.d} entries")
        if self.duration <= 0 or self.events_per_setting < 0 or self.windows() < 1:
            raise ConfigError("duration, events_per_setting and windows_per_setting must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        return self

    def windows(self) -> int:
        """Quantum windows per setting; mode-dependent unless set explicitly."""
        return DEFAULT_WINDOWS[self.mode] if self.windows_per_setting is None else self.windows_per_setting

    def drift_model(self) -> DriftModel:
        return self.drift if self.drift is not None else drift_preset(self.preset, self.d)

    def source(self) -> SourceConfig:
        if self.magnitudes is None:
            return SourceConfig.balanced(self.d, self.phases)
        return SourceConfig(self.d, self.magnitudes, np.zeros(self.d) if self.phases is None else self.phases)

    def efficiencies(self):
        if self.eta_a is None and self.eta_b is None:
            return None
        ones = [1.0] * self.d
        return [np.array(self.eta_a or ones), np.array(self.eta_b or ones)]


def load_config(path: str | os.PathLike | None, **overrides) -> ScenarioConfig:
    """Read an INI file with [scenario], [drift], [timing] and [tomography] sections."""
    cfg = ScenarioConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        try:
            cfg = _apply_ini(cfg, parser)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


def _apply_ini(cfg: ScenarioConfig, p: configparser.ConfigParser) -> ScenarioConfig:
    known = {"scenario", "drift", "timing", "tomography"}
    unknown = set(p.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    upd = {}
    if p.has_section("scenario"):
        s = p["scenario"]
        for key, conv in (("d", int), ("seed", int), ("duration", float), ("spacing", float)):
            if key in s:
                upd[key] = conv(s[key])
        if "out" in s:
            upd["out"] = Path(s["out"])
        if "initial_phases" in s:
            upd["initial_phases"] = s["initial_phases"].strip()
        if "magnitudes" in s:
            upd["magnitudes"] = _floats(s["magnitudes"])
        if "phases" in s:
            upd["phases"] = _floats(s["phases"])
        if "scaling_d" in s:
            upd["scaling_d"] = [int(v) for v in _floats(s["scaling_d"])]
        if "scaling_eps" in s:
            upd["scaling_eps"] = _floats(s["scaling_eps"])
        if "error_model" in s:
            upd["error_model"] = s["error_model"].strip()
    cfg = replace(cfg, **upd)
    if p.has_section("drift"):
        s = p["drift"]
        preset = s.get("preset", cfg.preset).strip()
        if preset not in DRIFT_PRESETS:
            raise ConfigError(f"unknown drift preset {preset!r}; choose from {DRIFT_PRESETS}")
        base = drift_preset(preset, cfg.d)
        drift = DriftModel(
            random_walk_sigma=s.getfloat("random_walk_sigma", fallback=float(base.sigma(cfg.d)[0])),
            sinusoids=base.sinusoids,
            readout_noise_rel=s.getfloat("readout_noise_rel", fallback=base.readout_noise_rel),
        )
        custom = {"random_walk_sigma", "readout_noise_rel"} & set(s)
        cfg = replace(cfg, preset=preset, drift=drift if custom else None)
    if p.has_section("timing"):
        s = p["timing"]
        t = cfg.timing
        cfg = replace(cfg, timing=TimingBudget(
            t_set_config=s.getfloat("t_set_config", fallback=t.t_set_config),
            t_measure_point=s.getfloat("t_measure_point", fallback=t.t_measure_point),
            t_fit=s.getfloat("t_fit", fallback=t.t_fit),
            t_quantum_window=s.getfloat("t_quantum_window", fallback=t.t_quantum_window),
            points_per_fringe=s.getint("points_per_fringe", fallback=t.points_per_fringe),
        ))
    if p.has_section("tomography"):
        s = p["tomography"]
        upd = {}
        for key, conv in (("events_per_setting", float), ("windows_per_setting", int), ("mc_reps", int)):
            if key in s:
                upd[key] = conv(s[key])
        for key in ("shot_noise", "fit_measured"):
            if key in s:
                upd[key] = s.getboolean(key)
        if "mode" in s:
            upd["mode"] = s["mode"].strip()
        for key in ("eta_a", "eta_b"):
            if key in s:
                upd[key] = _floats(s[key])
        cfg = replace(cfg, **upd)
    return cfg


def initial_channel(cfg: ScenarioConfig, rng) -> ChannelState:
    if cfg.initial_phases == "zero" or cfg.preset == "noiseless":
        return ChannelState.ideal(cfg.d)
    return ChannelState.ideal(cfg.d, rng.uniform(-np.pi, np.pi, cfg.d))


# ---------------------------------------------------------------- pipelines


def stabilise_sessions(cfg: ScenarioConfig, trial: int = 0):
    """Stabilisation off and on from the same initial channel and drift seed."""
    ch = initial_channel(cfg, derive_rng(cfg.seed, "initial-phases", trial))
    drift = cfg.drift_model()
    plan = build_plan(cfg.d)
    runs = {}
    for on in (False, True):
        runs[on] = run_session(ch, drift, plan, cfg.timing, duration=cfg.duration, stabilise=on,
                               rng_seed=derive_rng(cfg.seed, "session", trial, int(on)), spacing=cfg.spacing)
    return runs[False], runs[True], ch


def _window_channels(cfg: ScenarioConfig, n_windows: int) -> list[ChannelState]:
    """Channel snapshot at each quantum window."""
    rng = derive_rng(cfg.seed, "acquisition")
    ch = initial_channel(cfg, derive_rng(cfg.seed, "initial-phases", 0))
    if cfg.mode == "dephased":
        return [ch.evolve(phases=rng.uniform(-np.pi, np.pi, cfg.d)) for _ in range(n_windows)]
    snapshots: list[ChannelState] = []
    duration = n_windows * (cfg.timing.iteration_time(build_plan(cfg.d)) + cfg.timing.t_quantum_window)
    run_session(ch, cfg.drift_model(), build_plan(cfg.d), cfg.timing,
                quantum_callback=lambda c, t: snapshots.append(c), duration=duration * 1.001,
                stabilise=cfg.mode == "stabilised", rng_seed=rng, spacing=cfg.spacing)
    if len(snapshots) < n_windows:
        raise RuntimeError("session produced fewer quantum windows than required")
    return snapshots[:n_windows]


def acquire_records(cfg: ScenarioConfig) -> list[CountsRecord]:
    """Counts for every two-party local-MUB setting, each spread over several windows."""
    psi = prepare_bell_like(cfg.source())
    bases = mub_set(cfg.d)
    settings = all_settings(cfg.d, 2)
    w = cfg.windows()
    channels = _window_channels(cfg, len(settings) * w)
    eta = cfg.efficiencies()
    eta_outer = np.ones((cfg.d, cfg.d)) if eta is None else np.outer(eta[0], eta[1])
    rng = derive_rng(cfg.seed, "counts")
    records = []
    for k, s in enumerate(settings):
        mean = np.zeros((cfg.d, cfg.d))
        for ch in channels[k * w:(k + 1) * w]:
            out, _ = apply_channel(ch, psi)
            mean += cfg.events_per_setting / w * setting_probabilities(out, [bases.bases[s[0]], bases.bases[s[1]]])
        mean *= eta_outer
        counts = rng.poisson(mean).astype(float) if cfg.shot_noise else mean
        records.append(CountsRecord(cfg.d, s, counts, w * cfg.timing.t_quantum_window))
    return records


def tomography_pipeline(cfg: ScenarioConfig, mc_reps: int | None = None) -> tuple[list[CountsRecord], TomographyResult]:
    records = acquire_records(cfg)
    reps = cfg.mc_reps if mc_reps is None else mc_reps
    target = prepare_bell_like(cfg.source())
    result = reconstruct(records, cfg.efficiencies(), target=target, mc_reps=reps,
                         rng_seed=derive_rng(cfg.seed, "monte-carlo"), fit_measured=cfg.fit_measured)
    return records, result


# ---------------------------------------------------------------- commands


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def cmd_stabilise(cfg: ScenarioConfig) -> dict:
    means_off, means_on, aborted = [], [], 0
    for trial in range(cfg.trials):
        off, on, ch = stabilise_sessions(cfg, trial)
        means_off.append(off.mean_fidelity)
        means_on.append(on.mean_fidelity)
        aborted += on.aborted_iterations
        if trial == 0:
            _write(cfg.out, "session_off.csv", off.to_csv())
            _write(cfg.out, "session_on.csv", on.to_csv())
            decay = decay_after_correction(ch, cfg.drift_model(), duration=60.0, dt=0.5,
                                           rng_seed=derive_rng(cfg.seed, "decay"))
            _write(cfg.out, "decay.csv", serialize.rows_to_csv(["t_since_correction", "fidelity"], decay.tolist()))
    summary = {
        "d": cfg.d,
        "preset": cfg.preset,
        "trials": cfg.trials,
        "duration_s": cfg.duration,
        "duty_cycle": on.duty_cycle,
        "iteration_time_s": cfg.timing.iteration_time(build_plan(cfg.d)),
        "mean_fidelity_off": float(np.mean(means_off)),
        "mean_fidelity_on": float(np.mean(means_on)),
        "aborted_iterations": aborted,
    }
    _write(cfg.out, "stabilise_summary.json", serialize.dumps(summary))
    return summary


def cmd_tomography(cfg: ScenarioConfig) -> dict:
    records, result = tomography_pipeline(cfg)
    _write(cfg.out, "counts.csv", serialize.records_to_csv(records))
    _write(cfg.out, "rho_physical.csv", serialize.density_to_csv(result.rho_physical))
    _write(cfg.out, "rho_linear.csv", serialize.density_to_csv(result.rho_linear))
    data = serialize.result_to_dict(result, cfg.d)
    data["mode"] = cfg.mode
    _write(cfg.out, "tomography.json", serialize.dumps(data))
    return {k: data[k] for k in ("fidelity", "fidelity_std", "entropy", "entropy_std", "dimension_witness")}


def cmd_scaling(cfg: ScenarioConfig, trials: int) -> list[dict]:
    rows = error_scaling_study(cfg.scaling_d, cfg.scaling_eps, trials, derive_rng(cfg.seed, "scaling").integers(2**63),
                               cfg.error_model)
    _write(cfg.out, "scaling.csv", serialize.rows_to_csv(
        ["d", "epsilon", "mean_fidelity", "std_fidelity"],
        [(r["d"], r["epsilon"], r["mean_fidelity"], r["std_fidelity"]) for r in rows]))
    return rows


def cmd_counts(d: int, N: int) -> str:
    local, pauli, joint = measurement_counts(d, N)
    return (f"d={d} N={N}\n"
            f"local-MUB settings:          {local}\n"
            f"generalised-Pauli settings:  {pauli}\n"
            f"joint-MUB settings:          {joint}\n")


def cmd_rhom(cfg: ScenarioConfig, xs: list[float], points: int) -> dict:
    phi = np.linspace(0, 2 * np.pi, points)
    rows, vis = [], {}
    for x in xs:
        coinc, classical = rhom_fringe(phi, x)
        rows += [(x, p, c, k) for p, c, k in zip(phi, coinc, classical)]
        vis[repr(float(x))] = visibility(coinc)
    _write(cfg.out, "rhom.csv", serialize.rows_to_csv(["x", "phi", "coincidence", "classical"], rows))
    _write(cfg.out, "rhom_visibility.json", serialize.dumps(vis))
    return vis


def cmd_fringe_fit(cfg: ScenarioConfig, scan_path: str | None, spacings: list[float] | None, trials: int) -> dict:
    if scan_path is not None:
        data = np.loadtxt(scan_path, delimiter=",", skiprows=1, ndmin=2)
        fit = fit_fringe(data[:, :2], FitPriors.exact() if cfg.preset == "noiseless" else None)
        out = {"offset": fit.offset, "p_max": fit.p_max, "p_min": fit.p_min, "nu": fit.nu,
               "residual": fit.residual, "ok": fit.ok}
        _write(cfg.out, "fringe_fit.json", serialize.dumps({k: serialize._num(v) if k != "ok" else v
                                                             for k, v in out.items()}))
        return out
    spacings = spacings or [0.25, 0.5, 0.75, 1.0, 1.25, 1.4, 1.5, 1.75, 2.0]
    noise = cfg.drift_model().readout_noise_rel or 0.01
    errors = fringe_error_study(spacings, noise, trials, derive_rng(cfg.seed, "fringe").integers(2**63))
    _write(cfg.out, "fringe_error.csv",
           serialize.rows_to_csv(["spacing", "mean_abs_error"], list(zip(map(float, spacings), errors.tolist()))))
    return dict(zip(map(repr, map(float, spacings)), errors.tolist()))


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--trials", type=int, default=argparse.SUPPRESS, help="Monte-Carlo trials or repetitions")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="hdlink", parents=[common],
                                     description="High-dimensional chip-to-chip link simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    add("stabilise", help="drift sessions with and without stabilisation")
    t = add("tomography", help="simulate and reconstruct a two-qudit state")
    t.add_argument("--mode", choices=ACQUISITION_MODES)
    t.add_argument("--noiseless", action="store_true", help="no drift, no shot noise")
    sc = add("scaling", help="fidelity versus d and per-measurement phase error")
    sc.add_argument("--d", type=int, nargs="+")
    sc.add_argument("--eps", type=float, nargs="+")
    sc.add_argument("--error-model", choices=ERROR_MODELS)
    c = add("counts", help="number of measurement settings")
    c.add_argument("d", type=int)
    c.add_argument("N", type=int)
    r = add("rhom", help="reversed-HOM fringes versus indistinguishability")
    r.add_argument("--x", type=float, nargs="+", default=[0.0, 0.5, 0.9, 1.0])
    r.add_argument("--points", type=int, default=181)
    f = add("fringe-fit", help="fit a scan CSV (drive,power) or run the spacing study")
    f.add_argument("scan", nargs="?")
    f.add_argument("--spacings", type=float, nargs="+")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("config", "seed", "out", "trials", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "counts":
            sys.stdout.write(cmd_counts(args.d, args.N))
            return 0
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        out = args.out or os.environ.get(OUT_ENV)
        cfg = load_config(args.config, seed=args.seed, out=Path(out) if out else None)
        if args.command == "stabilise":
            result = cmd_stabilise(replace(cfg, trials=args.trials or cfg.trials).validate())
        elif args.command == "tomography":
            if args.noiseless:
                cfg = replace(cfg, preset="noiseless", initial_phases="zero", shot_noise=False, mc_reps=0)
            if args.mode:
                cfg = replace(cfg, mode=args.mode)
            if args.trials is not None:
                cfg = replace(cfg, mc_reps=args.trials)
            result = cmd_tomography(cfg.validate())
        elif args.command == "scaling":
            cfg = replace(cfg, scaling_d=args.d or cfg.scaling_d, scaling_eps=args.eps or cfg.scaling_eps,
                          error_model=args.error_model or cfg.error_model).validate()
            result = cmd_scaling(cfg, args.trials or 10_000)
        elif args.command == "rhom":
            result = cmd_rhom(cfg, args.x, args.points)
        else:
            result = cmd_fringe_fit(cfg, args.scan, args.spacings, args.trials or 1000)
    except ConfigError as exc:
        print(f"hdlink: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"hdlink: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
