"""Command-line front end wiring experiment configs to the pipeline.

One JSON config file describes an experiment; subcommands run the stages
(simulation, dictionary building, field optimization, estimation, noise
studies) and emit plot-ready CSV files. Field names in configs carry
explicit units (``t1_s``, ``fwhm_rad_per_s``) to keep unit bugs out of
experiment descriptions.

Exit codes: 0 success, 1 runtime or numeric failure, 2 config or input
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fileio
from .dictionary import distance, figure_of_merit, recognition_map
from .dictionary import ParameterPoint
from .estimation import FitConfig, correlation_scan, estimate
from .grape import OptimizerConfig, optimize_field, random_field
from .model import (
    DictionarySpec,
    SignalModel,
    build_dictionary,
    model_payload,
    spec_hash,
)
from .noise import compare_methods, ir_scenario, ofp_scenario, width_study

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """A config file or input file is malformed or inconsistent."""


_UNIT_NAMES = {
    "t1_s": "t1",
    "t2_s": "t2",
    "fwhm_rad_per_s": "fwhm",
    "center_rad_per_s": "center",
    "rf_scale": "rf_scale",
}
_MODEL_EXTRAS = {"n_points", "support_halfwidth"}


def _require(config: dict, key: str, where: str = "config"):
    if key not in config:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return config[key]


def _params_from(mapping: dict, where: str) -> dict:
    out = {}
    for key, value in mapping.items():
        if key not in _UNIT_NAMES:
            raise ConfigError(
                f"{where}: unknown parameter field {key!r} "
                f"(expected one of {sorted(_UNIT_NAMES)})")
        try:
            out[_UNIT_NAMES[key]] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: field {key!r} is not a number: "
                              f"{value!r}") from None
    return out


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _model_from(config: dict) -> SignalModel:
    section = dict(_require(config, "model"))
    n_points = int(section.pop("n_points", 101))
    support = float(section.pop("support_halfwidth", 5.0))
    defaults = _params_from(section, "model")
    try:
        return SignalModel(defaults, n_points=n_points,
                           support_halfwidth=support)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _grid_from(config: dict) -> tuple[ParameterPoint, ...]:
    rows = _require(config, "grid")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("grid: expected a non-empty list of parameter maps")
    points = []
    for i, row in enumerate(rows):
        try:
            points.append(ParameterPoint.from_mapping(
                _params_from(row, f"grid[{i}]")))
        except ValueError as exc:
            raise ConfigError(f"grid[{i}]: {exc}") from None
    return tuple(points)


def _optimizer_config(config: dict, seed: int, axis: str | None
                      ) -> OptimizerConfig:
    section = dict(config.get("optimizer", {}))
    clip = section.pop("amplitude_clip_rad", None)
    try:
        return OptimizerConfig(
            max_iterations=int(section.pop("max_iterations", 500)),
            step_size=float(section.pop("step_size", 1.0)),
            backtrack_factor=float(section.pop("backtrack_factor", 0.5)),
            growth_factor=float(section.pop("growth_factor", 1.2)),
            gradient_tolerance=float(section.pop("gradient_tolerance", 1e-8)),
            seed=int(section.pop("seed", seed)),
            n_starts=int(section.pop("n_starts", 5)),
            init_amplitude=float(section.pop("init_amplitude_rad", 0.3)),
            axis=axis or section.pop("axis", "xy"),
            amplitude_clip=None if clip is None else float(clip),
            objective=str(section.pop("objective", "normalized")),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def _fit_config(config: dict) -> FitConfig:
    section = dict(config.get("fit", {}))
    free_raw = section.pop("free", ["t1_s"])
    free = []
    for name in free_raw:
        if name not in _UNIT_NAMES:
            raise ConfigError(f"fit.free: unknown parameter {name!r}")
        free.append(_UNIT_NAMES[name])
    try:
        return FitConfig(
            free_parameters=tuple(free),
            fd_step=float(section.pop("fd_step", 1e-4)),
            max_iterations=int(section.pop("max_iterations", 200)),
            tolerance=float(section.pop("tolerance", 1e-6)),
            strategy=str(section.pop("strategy", "gradient")),
        )
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from None


def _sequence_from(config: dict, model: SignalModel,
                   grid: tuple[ParameterPoint, ...] | None, seed: int,
                   out_dir: str, config_hash: str, axis: str | None):
    """Resolve the pulse sequence per the config ``source``.

    Returns the sequence; an optimized or random field is also written to
    the output directory so downstream commands can reference it by file.
    """
    section = _require(config, "sequence")
    source = _require(section, "source", "sequence")
    delay = float(_require(section, "delay_s", "sequence"))
    if source == "file":
        path = _require(section, "path", "sequence")
        try:
            return fileio.load_sequence(path)
        except FileNotFoundError:
            raise ConfigError(f"sequence file not found: {path}") from None
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"sequence file {path}: {exc}") from None
    n_pulses = int(_require(section, "n_pulses", "sequence"))
    if source == "random":
        bound = float(section.get("amplitude_bound_rad", np.pi))
        seq = random_field(n_pulses, bound, int(section.get("seed", seed)),
                           delay, axis=axis or section.get("axis", "xy"))
        fileio.save_sequence(os.path.join(out_dir, "random_sequence.json"),
                             seq, {"source": "random", "config": config_hash})
        return seq
    if source == "optimize":
        if grid is None or len(grid) < 2:
            raise ConfigError("sequence.source=optimize needs a grid with "
                              ">= 2 points")
        opt = _optimizer_config(config, seed, axis)
        spec = DictionarySpec(model, grid)
        seq, trace = optimize_field(spec, config=opt, n_pulses=n_pulses,
                                    delay_t=delay)
        provenance = {
            "source": "optimize",
            "config": config_hash,
            "dict_spec_hash": spec_hash({
                "model": model_payload(model),
                "grid": [list(p.values) for p in grid],
            }),
            "seed": opt.seed,
            "final_c_n": trace.final_value,
        }
        fileio.save_sequence(os.path.join(out_dir, "optimized_sequence.json"),
                             seq, provenance)
        fileio.write_trace_csv(os.path.join(out_dir, "trace.csv"), trace,
                               config_hash)
        return seq
    raise ConfigError(f"sequence.source: unknown source {source!r}")


def _emit_gnuplot(csv_path: str, columns: str, title: str) -> None:
    script = (f'set datafile separator ","\nset title "{title}"\n'
              f'plot "{os.path.basename(csv_path)}" using {columns} '
              f"with linespoints\n")
    with open(csv_path + ".gp", "w") as fh:
        fh.write(script)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(config: dict, args) -> int:
    model = _model_from(config)
    grid = _grid_from(config)
    out = args.out
    chash = args.config_hash
    seq = _sequence_from(config, model, grid, args.seed, out, chash, args.axis)
    manifest = []
    for i, point in enumerate(grid):
        name = f"trajectory_{i:03d}.csv"
        traj = model.trajectory(seq, point)
        fileio.write_trajectory_csv(os.path.join(out, name), traj, seq.delay_t,
                                    chash)
        manifest.append({"file": name, "parameters": point.as_dict()})
        if args.gnuplot:
            _emit_gnuplot(os.path.join(out, name), "2:3", f"mx, entry {i}")
    with open(os.path.join(out, "trajectories.json"), "w") as fh:
        json.dump({"tool": fileio.provenance_line(chash), "entries": manifest},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_build_dict(config: dict, args) -> int:
    model = _model_from(config)
    grid = _grid_from(config)
    seq = _sequence_from(config, model, grid, args.seed, args.out,
                         args.config_hash, args.axis)
    dictionary = build_dictionary(DictionarySpec(model, grid), seq)
    fileio.save_dictionary(os.path.join(args.out, "dictionary.json"),
                           dictionary, model)
    rmap = recognition_map(dictionary)
    fileio.write_recognition_map(os.path.join(args.out, "recognition_map.csv"),
                                 rmap, args.config_hash)
    return 0


def cmd_optimize(config: dict, args) -> int:
    model = _model_from(config)
    grid = _grid_from(config)
    if len(grid) < 2:
        raise ConfigError("optimize needs a grid with >= 2 points")
    section = dict(_require(config, "sequence"))
    n_pulses = int(_require(section, "n_pulses", "sequence"))
    delay = float(_require(section, "delay_s", "sequence"))
    opt = _optimizer_config(config, args.seed, args.axis)
    spec = DictionarySpec(model, grid)
    seq, trace = optimize_field(spec, config=opt, n_pulses=n_pulses,
                                delay_t=delay)
    provenance = {
        "source": "optimize",
        "config": args.config_hash,
        "dict_spec_hash": spec_hash({"model": model_payload(model),
                                     "grid": [list(p.values) for p in grid]}),
        "seed": opt.seed,
        "final_c_n": trace.final_value,
    }
    fileio.save_sequence(os.path.join(args.out, "optimized_sequence.json"),
                         seq, provenance)
    fileio.write_trace_csv(os.path.join(args.out, "trace.csv"), trace,
                           args.config_hash)
    if args.gnuplot:
        _emit_gnuplot(os.path.join(args.out, "trace.csv"), "1:2",
                      "figure of merit")
    if args.random_baseline > 0:
        bound = float(section.get("amplitude_bound_rad", np.pi))
        lines = [fileio.provenance_line(args.config_hash), "seed,c_n"]
        for s in range(args.random_baseline):
            baseline = random_field(n_pulses, bound, s, delay,
                                    axis=args.axis or "xy")
            value = figure_of_merit(build_dictionary(spec, baseline))
            lines.append(f"{s},{format(value, '.17g')}")
        with open(os.path.join(args.out, "random_baseline.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def cmd_estimate(config: dict, args) -> int:
    if not args.signal:
        raise ConfigError("estimate needs --signal <trajectory csv>")
    model = _model_from(config)
    grid = _grid_from(config)
    seq = _sequence_from(config, model, grid, args.seed, args.out,
                         args.config_hash, args.axis)
    try:
        signal = fileio.read_signal_csv(args.signal)
    except FileNotFoundError:
        raise ConfigError(f"signal file not found: {args.signal}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dictionary = build_dictionary(DictionarySpec(model, grid), seq)
    if signal.shape[0] != dictionary.n_samples:
        raise ConfigError(
            f"signal has {signal.shape[0]} samples, dictionary has "
            f"{dictionary.n_samples}")
    report = estimate(dictionary, signal, _fit_config(config), seq, model)
    hashes = {"field_fingerprint": dictionary.field_fingerprint,
              "config": args.config_hash}
    fileio.write_report_json(os.path.join(args.out, "estimate.json"), report,
                             args.config_hash, hashes)
    # per-entry residual curve (the colorbar lookup made quantitative)
    lines = [fileio.provenance_line(args.config_hash)]
    names = dictionary.points[0].names
    lines.append(",".join(names) + ",residual")
    for point, traj in zip(dictionary.points, dictionary.trajectories):
        values = ",".join(format(v, ".17g") for v in point.values)
        lines.append(f"{values},{format(distance(traj, signal), '.17g')}")
    with open(os.path.join(args.out, "residuals.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_noise_study(config: dict, args) -> int:
    model = _model_from(config)
    grid = _grid_from(config)
    noise = _require(config, "noise")
    eps_grid = [float(e) for e in _require(noise, "epsilons", "noise")]
    draws = int(noise.get("draws", 30))
    truth = _params_from(_require(config, "truth"), "truth")
    fit = _fit_config(config)
    target = fit.free_parameters[0]
    seq = _sequence_from(config, model, grid, args.seed, args.out,
                         args.config_hash, args.axis)
    spec = DictionarySpec(model, grid)
    main_dict = build_dictionary(spec, seq)
    source = _require(config, "sequence")["source"]
    main_label = "random-main" if source == "random" else "optimal"
    scenario = ofp_scenario(main_label, main_dict, seq, model, fit, truth,
                            target)
    baseline_cfg = noise.get("baseline", {})
    baseline_seq = random_field(
        seq.count, float(baseline_cfg.get("amplitude_bound_rad", np.pi)),
        int(baseline_cfg.get("seed", args.seed)), seq.delay_t,
        axis=args.axis or "xy")
    baseline_dict = build_dictionary(spec, baseline_seq)
    baseline = ofp_scenario("random", baseline_dict, baseline_seq, model, fit,
                            truth, target)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    reports = []
    for sc in (scenario, baseline):
        report = width_study(
            sc, eps_grid, draws=draws, master_seed=args.seed,
            robust=bool(noise.get("robust", False)), n_workers=args.threads,
            checkpoint=os.path.join(ckpt_dir,
                                    f"{args.config_hash}_{sc.name}.csv"))
        path = os.path.join(args.out, f"width_{sc.name}.csv")
        fileio.write_width_report_csv(path, report, args.config_hash)
        if args.gnuplot:
            _emit_gnuplot(path, "1:3", f"width, {sc.name}")
        reports.append(report)
    table = compare_methods(reports[1], reports[0])
    fileio.write_comparison_csv(os.path.join(args.out, "ratio.csv"), table,
                                args.config_hash)
    return 0


def cmd_ir_compare(config: dict, args) -> int:
    model = _model_from(config)
    grid = _grid_from(config)
    noise = _require(config, "noise")
    eps_grid = [float(e) for e in _require(noise, "epsilons", "noise")]
    draws = int(noise.get("draws", 30))
    truth = _params_from(_require(config, "truth"), "truth")
    fit = _fit_config(config)
    ir_cfg = config.get("ir", {})
    seq = _sequence_from(config, model, grid, args.seed, args.out,
                         args.config_hash, args.axis)
    spec = DictionarySpec(model, grid)
    ofp = ofp_scenario("ofp", build_dictionary(spec, seq), seq, model, fit,
                       truth, "t1")
    ir = ir_scenario("ir", model.params_at(truth)["t1"],
                     n_points=int(ir_cfg.get("n_points", 120)),
                     spacing=float(ir_cfg.get("spacing_s", 0.01)))
    ckpt_dir = os.path.join(args.out, "checkpoints")
    reports = []
    for sc in (ir, ofp):
        report = width_study(
            sc, eps_grid, draws=draws, master_seed=args.seed,
            n_workers=args.threads,
            checkpoint=os.path.join(ckpt_dir,
                                    f"{args.config_hash}_{sc.name}.csv"))
        fileio.write_width_report_csv(
            os.path.join(args.out, f"width_{sc.name}.csv"), report,
            args.config_hash)
        reports.append(report)
    table = compare_methods(reports[0], reports[1])
    fileio.write_comparison_csv(os.path.join(args.out, "ratio.csv"), table,
                                args.config_hash)
    return 0


def cmd_scan_fwhm(config: dict, args) -> int:
    if not args.signal:
        raise ConfigError("scan-fwhm needs --signal <trajectory csv>")
    model = _model_from(config)
    grid = config.get("grid")
    points = _grid_from(config) if grid else None
    fwhm_grid = [float(v) for v in _require(config, "fwhm_grid_rad_per_s")]
    seq = _sequence_from(config, model, points, args.seed, args.out,
                         args.config_hash, args.axis)
    try:
        signal = fileio.read_signal_csv(args.signal)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    fit = _fit_config(config)
    start = _params_from(_require(config, "truth"), "truth")
    scan = correlation_scan(signal, seq, model, fwhm_grid, fit, start)
    path = os.path.join(args.out, "fwhm_scan.csv")
    fileio.write_scan_csv(path, scan, args.config_hash)
    if args.gnuplot:
        _emit_gnuplot(path, "1:4", "residual vs fwhm")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "build-dict": cmd_build_dict,
    "optimize": cmd_optimize,
    "estimate": cmd_estimate,
    "noise-study": cmd_noise_study,
    "ir-compare": cmd_ir_compare,
    "scan-fwhm": cmd_scan_fwhm,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinfp",
        description="Fingerprinting of spin relaxation parameters.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="experiment JSON")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--out", default=None,
                         help="override the config output directory")
        cmd.add_argument("--threads", type=int, default=None,
                         help="worker processes for Monte Carlo draws "
                              "(falls back to FP_THREADS)")
        cmd.add_argument("--axis", choices=("x", "xy"), default=None,
                         help="restrict control pulses to one axis")
        cmd.add_argument("--gnuplot", action="store_true",
                         help="emit companion gnuplot scripts")
        if name == "optimize":
            cmd.add_argument("--random-baseline", type=int, default=0,
                             help="also evaluate N random fields")
        if name in ("estimate", "scan-fwhm"):
            cmd.add_argument("--signal", default=None,
                             help="measured trajectory CSV")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config)
        args.seed = args.seed if args.seed is not None \
            else int(config.get("seed", 0))
        args.out = args.out or config.get("out_dir", "out")
        if args.threads is None:
            args.threads = int(os.environ.get("FP_THREADS", "1"))
        resolved = dict(config)
        resolved["_overrides"] = {"seed": args.seed,
                                  "axis": getattr(args, "axis", None)}
        args.config_hash = spec_hash(resolved)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
