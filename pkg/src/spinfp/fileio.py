"""File formats: versioned JSON artifacts and plot-ready CSV tables.

Every output carries a ``#``-prefixed provenance line (tool version plus
the configuration hash) and writes floats with 17 significant digits, so
reruns with identical inputs produce byte-identical files and round-trips
recover the exact binary values.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import __version__
from .bloch import PulseSequence
from .dictionary import Dictionary, ParameterPoint, RecognitionMap
from .model import (
    SignalModel,
    field_fingerprint,
    model_payload,
    sequence_payload,
    spec_hash,
)

__all__ = [
    "provenance_line",
    "save_sequence",
    "load_sequence",
    "save_dictionary",
    "load_dictionary",
    "write_trajectory_csv",
    "read_signal_csv",
    "write_trace_csv",
    "write_recognition_map",
    "write_width_report_csv",
    "write_comparison_csv",
    "write_scan_csv",
    "write_report_json",
]

_SEQUENCE_VERSION = 1
_DICTIONARY_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def provenance_line(config_hash: str = "") -> str:
    tag = f" config={config_hash}" if config_hash else ""
    return f"# spinfp {__version__}{tag}"


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Pulse sequence files
# ---------------------------------------------------------------------------

def save_sequence(path: str, seq: PulseSequence, provenance: dict | None = None
                  ) -> None:
    """Write a pulse sequence with an optional provenance block."""
    payload = {"version": _SEQUENCE_VERSION, "tool": provenance_line()}
    payload.update(sequence_payload(seq))
    if provenance:
        payload["provenance"] = provenance
    _write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_sequence(path: str, with_provenance: bool = False):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != _SEQUENCE_VERSION:
        raise ValueError(f"{path}: unsupported sequence file version "
                         f"{payload.get('version')!r}")
    seq = PulseSequence(np.array(payload["pulses"], dtype=np.float64),
                        float(payload["delay_t"]))
    if with_provenance:
        return seq, payload.get("provenance", {})
    return seq


# ---------------------------------------------------------------------------
# Dictionary files
# ---------------------------------------------------------------------------

def save_dictionary(path: str, dictionary: Dictionary, model: SignalModel
                    ) -> None:
    """Persist grid, trajectories and the hashes tying them to the field."""
    payload = {
        "version": _DICTIONARY_VERSION,
        "tool": provenance_line(),
        "field_fingerprint": dictionary.field_fingerprint,
        "model_hash": spec_hash(model_payload(model)),
        "model": model_payload(model),
        "parameter_names": list(dictionary.points[0].names),
        "grid": [list(p.values) for p in dictionary.points],
        "trajectories": dictionary.trajectories.tolist(),
    }
    _write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_dictionary(path: str, sequence: PulseSequence | None = None,
                    model: SignalModel | None = None) -> Dictionary:
    """Load a dictionary, rejecting stale field/model pairs.

    When ``sequence`` and ``model`` are provided, the stored field
    fingerprint must match the one recomputed from them.
    """
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != _DICTIONARY_VERSION:
        raise ValueError(f"{path}: unsupported dictionary file version "
                         f"{payload.get('version')!r}")
    names = tuple(payload["parameter_names"])
    points = tuple(ParameterPoint(names, tuple(values))
                   for values in payload["grid"])
    dictionary = Dictionary(points=points,
                            trajectories=np.array(payload["trajectories"]),
                            field_fingerprint=payload["field_fingerprint"])
    if sequence is not None and model is not None:
        expected = field_fingerprint(sequence, model)
        if dictionary.field_fingerprint != expected:
            raise ValueError(
                f"{path}: stale dictionary (field fingerprint "
                f"{dictionary.field_fingerprint} != {expected})")
    return dictionary


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def write_trajectory_csv(path: str, trajectory: np.ndarray, delay_t: float,
                         config_hash: str = "") -> None:
    """One row per sample: ``k,t,mx,my`` with 17-digit floats."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    lines = [provenance_line(config_hash), "k,t,mx,my"]
    for k, (mx, my) in enumerate(trajectory, start=1):
        lines.append(f"{k},{_fmt(k * delay_t)},{_fmt(mx)},{_fmt(my)}")
    _write_text(path, "\n".join(lines) + "\n")


def read_signal_csv(path: str) -> np.ndarray:
    """Read a trajectory CSV back into an ``(n, 2)`` array.

    Parse failures report the offending row number.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if text.lower().startswith("k,"):
                continue
            parts = text.split(",")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}: row {lineno}: expected 4 fields, got {len(parts)}")
            try:
                rows.append((float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.array(rows)


def write_trace_csv(path: str, trace, config_hash: str = "") -> None:
    lines = [provenance_line(config_hash), "iteration,c_n,grad_norm,step"]
    for i, (value, gnorm, step) in enumerate(
            zip(trace.values, trace.grad_norms, trace.steps)):
        lines.append(f"{i},{_fmt(value)},{_fmt(gnorm)},{_fmt(step)}")
    _write_text(path, "\n".join(lines) + "\n")


def write_recognition_map(path: str, rmap: RecognitionMap,
                          config_hash: str = "") -> None:
    """Distance matrix CSV plus a sidecar with the contrast statistic."""
    lines = [provenance_line(config_hash)]
    for row in rmap.matrix:
        lines.append(",".join(_fmt(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")
    sidecar = {
        "tool": provenance_line(config_hash),
        "min_off_diagonal": None if rmap.matrix.shape[0] < 2
        else rmap.min_off_diagonal,
    }
    _write_text(path + ".stats.json",
                json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def write_width_report_csv(path: str, report, config_hash: str = "") -> None:
    lines = [provenance_line(config_hash),
             "epsilon,mean,width,draws,failures,method"]
    for eps, mean, width, fails in zip(report.epsilons, report.means,
                                       report.widths, report.failures):
        lines.append(f"{_fmt(eps)},{_fmt(mean)},{_fmt(width)},"
                     f"{report.draws},{fails},{report.method}")
    _write_text(path, "\n".join(lines) + "\n")


def write_comparison_csv(path: str, table, config_hash: str = "") -> None:
    lines = [provenance_line(config_hash),
             "epsilon,ratio,ratio_se,defined"]
    for eps, ratio, se, ok in zip(table.epsilons, table.ratios,
                                  table.ratio_standard_errors, table.defined):
        ratio_s = _fmt(ratio) if ok else "undefined"
        se_s = _fmt(se) if ok else "undefined"
        lines.append(f"{_fmt(eps)},{ratio_s},{se_s},{int(ok)}")
    _write_text(path, "\n".join(lines) + "\n")


def write_scan_csv(path: str, points, config_hash: str = "") -> None:
    lines = [provenance_line(config_hash),
             "fwhm,t2,omega_bar,residual,t2_star"]
    for p in points:
        if p.parameters is None:
            lines.append(f"{_fmt(p.fwhm)},failed,failed,failed,failed")
        else:
            fitted = p.parameters.as_dict()
            lines.append(f"{_fmt(p.fwhm)},{_fmt(fitted['t2'])},"
                         f"{_fmt(fitted['center'])},{_fmt(p.residual)},"
                         f"{_fmt(p.t2_star)}")
    _write_text(path, "\n".join(lines) + "\n")


def write_report_json(path: str, report, config_hash: str = "",
                      hashes: dict | None = None) -> None:
    payload = {
        "tool": provenance_line(config_hash),
        "matched_index": report.matched_index,
        "matched_residual": report.matched_residual,
        "tie": report.tie,
        "parameters": report.parameters.as_dict(),
        "final_residual": report.final_residual,
        "iterations_used": report.iterations_used,
        "converged": report.converged,
    }
    if hashes:
        payload["provenance"] = hashes
    _write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")
