"""Command-line entry point: each pipeline stage as a reproducible file run.

Subcommands: spectrum | efficiency | protocol | tomo-selftest | sweep.
Every run resolves its configuration (YAML file over built-in defaults,
unknown keys rejected), writes a manifest echoing the full resolution, and
emits CSV/JSON outputs that are byte-identical for identical config + seed.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, _kernels, tomography
from .linalg import QuantumState, coherent, fidelity, ket_density, negativity
from .model import (
    SystemParams,
    default_params,
    gaussian_input_mode,
    ideal_params,
    reflection_coefficient,
)
from .dynamics import PulseSchedule
from .protocol import (
    SWEEP_AXES,
    default_schedule,
    efficiency_scan,
    entanglement_report,
    run_protocol,
    sweep,
)

TWO_PI = 2.0 * math.pi
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

CAL_PHOTON_NUMBER = 0.137  # reference coherent intensity for the selftest

_PARAM_HZ_KEYS = (
    "omega_c", "omega_q", "chi", "kappa_ex", "kappa_in", "anharmonicity",
)
_PARAM_PLAIN_KEYS = (
    "T1", "T2_star", "T2_echo", "p_th", "n_th", "eps_rg", "eps_re", "eta_meas",
)


class ConfigError(Exception):
    """Invalid or unparseable run configuration."""


def default_config() -> dict:
    """Fully resolved defaults; frequencies as plain Hz (value/2pi)."""
    p = default_params()
    params = {k: getattr(p, k) / TWO_PI for k in _PARAM_HZ_KEYS}
    params.update({k: getattr(p, k) for k in _PARAM_PLAIN_KEYS})
    return {
        "params": params,
        "schedule": {
            "pulse_fwhm": 500e-9,
            "gate_interval": 1100e-9,
            "readout_delay": 100e-9,
            "t_i": None,
            "t_g": None,
            "t_f": None,
            "n_in": 0.165,
            "alpha_sq_grid": [
                0.0, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.3, 0.45, 0.6,
            ],
        },
        "tomography": {
            "phases": 100,
            "shots": 10_000,
            "eta": 0.43,
            "seed": 7,
            "iterations": 10_000,
        },
        "spectrum": {"span_hz": 16e6, "points": 1601},
        "efficiency": {
            "preset": "table",
            "gate_interval": None,
            "fit_window": 0.10,
        },
        "protocol": {"n_ph": 2, "wigner": True},
        "sweep": {
            "axis": "gate_interval",
            "values": [500e-9, 700e-9, 800e-9, 900e-9, 1100e-9],
        },
    }


def _as_float(value, key: str, *, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    raise ConfigError(f"{key} must be a number, got {type(value).__name__}")


def _as_int(value, key: str, *, allow_none: bool = False):
    if value is None and allow_none:
        return None
    f = _as_float(value, key)
    if f != int(f):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return int(f)


def load_config(path: str | None) -> dict:
    """Merge a YAML config over the defaults with strict key checking."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    for section, block in data.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(block, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in block.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            cfg[section][key] = value
    _normalize(cfg)
    return cfg


def _normalize(cfg: dict) -> None:
    p = cfg["params"]
    for k in _PARAM_HZ_KEYS + _PARAM_PLAIN_KEYS:
        p[k] = _as_float(p[k], f"params.{k}")
    s = cfg["schedule"]
    for k in ("pulse_fwhm", "gate_interval", "readout_delay", "n_in"):
        s[k] = _as_float(s[k], f"schedule.{k}")
    for k in ("t_i", "t_g", "t_f"):
        s[k] = _as_float(s[k], f"schedule.{k}", allow_none=True)
    if not isinstance(s["alpha_sq_grid"], (list, tuple)):
        raise ConfigError("schedule.alpha_sq_grid must be a list")
    s["alpha_sq_grid"] = [
        _as_float(v, "schedule.alpha_sq_grid entry") for v in s["alpha_sq_grid"]
    ]
    t = cfg["tomography"]
    for k in ("phases", "shots", "iterations"):
        t[k] = _as_int(t[k], f"tomography.{k}")
    t["eta"] = _as_float(t["eta"], "tomography.eta")
    t["seed"] = _as_int(t["seed"], "tomography.seed", allow_none=True)
    sp = cfg["spectrum"]
    sp["span_hz"] = _as_float(sp["span_hz"], "spectrum.span_hz")
    sp["points"] = _as_int(sp["points"], "spectrum.points")
    eff = cfg["efficiency"]
    if eff["preset"] not in ("table", "ideal"):
        raise ConfigError("efficiency.preset must be 'table' or 'ideal'")
    eff["gate_interval"] = _as_float(
        eff["gate_interval"], "efficiency.gate_interval", allow_none=True
    )
    eff["fit_window"] = _as_float(eff["fit_window"], "efficiency.fit_window")
    pr = cfg["protocol"]
    pr["n_ph"] = _as_int(pr["n_ph"], "protocol.n_ph")
    if not isinstance(pr["wigner"], bool):
        raise ConfigError("protocol.wigner must be true or false")
    sw = cfg["sweep"]
    if sw["axis"] not in SWEEP_AXES:
        raise ConfigError(
            f"unknown sweep axis {sw['axis']!r}; choose from {', '.join(SWEEP_AXES)}"
        )
    if not isinstance(sw["values"], (list, tuple)) or not sw["values"]:
        raise ConfigError("sweep.values must be a non-empty list")
    sw["values"] = [_as_float(v, "sweep.values entry") for v in sw["values"]]


def _build_params(cfg: dict) -> SystemParams:
    c = cfg["params"]
    try:
        return SystemParams.from_hz(
            **{k: c[k] for k in _PARAM_HZ_KEYS},
            **{k: c[k] for k in _PARAM_PLAIN_KEYS},
        )
    except ValueError as exc:
        raise ConfigError(f"invalid params: {exc}") from None


def _build_schedule(cfg: dict) -> PulseSchedule:
    s = cfg["schedule"]
    explicit = [s["t_i"], s["t_g"], s["t_f"]]
    try:
        if any(v is not None for v in explicit):
            if any(v is None for v in explicit):
                raise ConfigError("t_i, t_g, t_f must be given together")
            mode = gaussian_input_mode(s["pulse_fwhm"])
            return PulseSchedule(
                s["t_i"], s["t_g"], s["t_f"], mode,
                alpha_in=math.sqrt(s["n_in"]),
            )
        return default_schedule(
            s["n_in"],
            gate_interval=s["gate_interval"],
            pulse_fwhm=s["pulse_fwhm"],
            readout_delay=s["readout_delay"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid schedule: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers


def _fmt(value) -> str:
    return f"{float(value):.17g}"


def _num(value):
    """JSON-safe number: non-finite values become null."""
    value = float(value)
    return value if math.isfinite(value) else None


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_state(path: Path, state: QuantumState | None) -> None:
    rows = []
    if state is not None:
        for i, row in enumerate(state.rho):
            for j, value in enumerate(row):
                rows.append([i, j, _fmt(value.real), _fmt(value.imag)])
    _write_csv(path, ["row", "col", "real", "imag"], rows)


def _write_manifest(outdir: Path, command: str, cfg: dict, seed, threads) -> None:
    _write_json(
        outdir / "manifest.json",
        {
            "subcommand": command,
            "config": cfg,
            "seed": seed,
            "threads": threads,
            "backend": _kernels.BACKEND,
            "version": __version__,
        },
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(cfg: dict, outdir: Path, seed, threads) -> None:
    params = _build_params(cfg)
    span = cfg["spectrum"]["span_hz"]
    points = cfg["spectrum"]["points"]
    if points < 2:
        raise ConfigError("spectrum.points must be at least 2")
    detuning = np.linspace(-span / 2, span / 2, points)
    omega = params.omega_c + TWO_PI * detuning
    r_g = reflection_coefficient(params, "g", omega)
    r_e = reflection_coefficient(params, "e", omega)
    rows = [
        [
            _fmt(d),
            _fmt(abs(g) ** 2), _fmt(np.angle(g)),
            _fmt(abs(e) ** 2), _fmt(np.angle(e)),
        ]
        for d, g, e in zip(detuning, r_g, r_e)
    ]
    _write_csv(
        outdir / "spectrum.csv",
        ["detuning_hz", "reflectance_g", "phase_g", "reflectance_e", "phase_e"],
        rows,
    )


def cmd_efficiency(cfg: dict, outdir: Path, seed, threads) -> None:
    eff = cfg["efficiency"]
    if eff["preset"] == "ideal":
        params = ideal_params()
        gate_interval = eff["gate_interval"] or 1600e-9
    else:
        params = _build_params(cfg)
        gate_interval = eff["gate_interval"] or 800e-9
    template = default_schedule(
        gate_interval=gate_interval,
        pulse_fwhm=cfg["schedule"]["pulse_fwhm"],
        readout_delay=cfg["schedule"]["readout_delay"],
    )
    try:
        report = efficiency_scan(
            params,
            template,
            cfg["schedule"]["alpha_sq_grid"],
            fit_window=eff["fit_window"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid efficiency grid: {exc}") from None
    _write_csv(
        outdir / "efficiency_curve.csv",
        ["mean_input_photons", "flip_probability"],
        [[_fmt(x), _fmt(y)] for x, y in zip(report.grid, report.p_flip)],
    )
    _write_json(
        outdir / "efficiency.json",
        {
            "eta": _num(report.eta),
            "dark_count": _num(report.dark_count),
            "curvature": _num(report.curvature),
            "residual_rms": _num(report.residual_rms),
            "bending": _num(report.bending),
            "fit_window": _num(report.fit_window),
            "gate_interval": _num(gate_interval),
            "preset": eff["preset"],
        },
    )


def cmd_protocol(cfg: dict, outdir: Path, seed, threads) -> None:
    params = _build_params(cfg)
    schedule = _build_schedule(cfg)
    n_ph = cfg["protocol"]["n_ph"]
    result = run_protocol(params, schedule, n_ph=n_ph)
    report = entanglement_report(result)
    _write_json(
        outdir / "report.json",
        {
            "input_photons": _num(result.n_in),
            "output_photons": _num(result.moments.mean_photon),
            "survival": _num(result.survival),
            "delay_s": _num(result.delay),
            "reference_phase": _num(result.phase_ref),
            "flip_probability_raw": _num(result.p_e_raw),
            "flip_probability": _num(result.p_e),
            "negativity": _num(report["negativity"]),
            "fidelity_to_ideal": _num(report["fidelity_to_ideal"]),
            "fidelity_ground_vacuum": _num(result.fidelity_vacuum),
            "fidelity_excited_single": _num(result.fidelity_single),
        },
    )
    _write_state(outdir / "state_ground.csv", result.rho_g)
    _write_state(outdir / "state_excited.csv", result.rho_e)
    _write_state(outdir / "state_unconditional.csv", result.rho_uncond)
    _write_state(outdir / "state_composite.csv", result.rho_comp)
    dim = n_ph + 1
    dist_g = tomography.photon_distribution(result.rho_g)
    dist_u = tomography.photon_distribution(result.rho_uncond)
    dist_e = (
        tomography.photon_distribution(result.rho_e)
        if result.rho_e is not None
        else [math.nan] * dim
    )
    _write_csv(
        outdir / "photon_distributions.csv",
        ["n", "ground", "excited", "unconditional"],
        [
            [n, _fmt(dist_g[n]), _fmt(dist_e[n]), _fmt(dist_u[n])]
            for n in range(dim)
        ],
    )
    if cfg["protocol"]["wigner"]:
        grid = np.linspace(-3.0, 3.0, 61)
        tomography.write_wigner(
            outdir / "wigner_ground.csv", grid, tomography.wigner(result.rho_g, grid)
        )
        if result.rho_e is not None:
            tomography.write_wigner(
                outdir / "wigner_excited.csv",
                grid,
                tomography.wigner(result.rho_e, grid),
            )


def cmd_tomo_selftest(cfg: dict, outdir: Path, seed, threads) -> None:
    if seed is None:
        raise ConfigError("a seed is required for reproducible sampling")
    t = cfg["tomography"]
    eta = t["eta"]
    thetas = tomography.phase_settings(t["phases"])
    iters = t["iterations"]

    cal = QuantumState(
        ket_density(coherent(5, math.sqrt(CAL_PHOTON_NUMBER))), (5,)
    )
    record = tomography.sample(
        cal, thetas, t["shots"], eta=eta, seed=seed
    )
    tomography.write_record(
        record, outdir / "record_coherent.csv", outdir / "record_coherent.json"
    )
    est_raw = tomography.mle_reconstruct(
        record, iterations=iters, correct_efficiency=False
    )
    est_cor = tomography.mle_reconstruct(record, iterations=iters)
    levels = np.arange(5)
    attenuated = QuantumState(
        ket_density(coherent(5, math.sqrt(eta * CAL_PHOTON_NUMBER))), (5,)
    )

    params = _build_params(cfg)
    schedule = _build_schedule(cfg)
    result = run_protocol(params, schedule)
    comp_record = tomography.sample_composite(
        result.rho_comp, thetas, t["shots"], eta=eta, seed=seed + 1
    )
    tomography.write_record(
        comp_record,
        outdir / "record_composite.csv",
        outdir / "record_composite.json",
    )
    comp_raw = tomography.composite_mle(
        comp_record, iterations=iters, correct_efficiency=False
    )
    comp_cor = tomography.composite_mle(comp_record, iterations=iters)

    _write_json(
        outdir / "selftest.json",
        {
            "coherent": {
                "input_photons": CAL_PHOTON_NUMBER,
                "uncorrected": {
                    "mean_photon": _num(
                        levels @ tomography.photon_distribution(est_raw)
                    ),
                    "fidelity_to_attenuated": _num(fidelity(est_raw, attenuated)),
                },
                "corrected": {
                    "mean_photon": _num(
                        levels @ tomography.photon_distribution(est_cor)
                    ),
                    "fidelity_to_input": _num(fidelity(est_cor, cal)),
                },
            },
            "composite": {
                "input_negativity": _num(negativity(result.rho_comp)),
                "uncorrected_negativity": _num(negativity(comp_raw)),
                "corrected_negativity": _num(negativity(comp_cor)),
            },
        },
    )


def cmd_sweep(cfg: dict, outdir: Path, seed, threads) -> None:
    params = _build_params(cfg)
    points = sweep(params, cfg["sweep"]["axis"], cfg["sweep"]["values"])
    _write_csv(
        outdir / "sweep.csv",
        ["value", "eta", "dark_count", "survival", "negativity"],
        [
            [
                _fmt(pt.value), _fmt(pt.eta), _fmt(pt.dark_count),
                _fmt(pt.survival), _fmt(pt.negativity),
            ]
            for pt in points
        ],
    )


_COMMANDS = {
    "spectrum": cmd_spectrum,
    "efficiency": cmd_efficiency,
    "protocol": cmd_protocol,
    "tomo-selftest": cmd_tomo_selftest,
    "sweep": cmd_sweep,
}


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="qndsim",
        description="Simulator of dispersive single-photon detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "spectrum": "cavity reflection spectra for both qubit states",
        "efficiency": "phase-flip probability scan and efficiency fit",
        "protocol": "full detection run with conditional states",
        "tomo-selftest": "sampling and reconstruction round-trips",
        "sweep": "efficiency figures along one parameter axis",
    }
    for name, handler in _COMMANDS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="override the sampling seed")
        sp.add_argument(
            "--threads", type=int, help="compiled-backend thread count"
        )
        sp.set_defaults(handler=handler)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg["tomography"]["seed"]
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            try:
                import numba

                numba.set_num_threads(args.threads)
            except ImportError:
                pass
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_manifest(outdir, args.command, cfg, seed, args.threads)
        args.handler(cfg, outdir, seed, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
