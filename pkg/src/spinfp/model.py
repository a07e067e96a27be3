"""Mapping from named physical parameters to simulated fingerprints.

A :class:`SignalModel` fixes everything about the measured system except
the parameters under study: the offset-distribution discretization, the RF
scale, and default values for whatever is not being varied. Combining it
with a pulse sequence and a parameter point yields one fingerprint
trajectory; combining it with a parameter grid yields a dictionary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bloch import (
    BlochPropagator,
    Isochromat,
    LorentzianSpec,
    PulseSequence,
    RelaxationParams,
    SpinEnsemble,
    make_lorentzian_ensemble,
)
from .dictionary import Dictionary, ParameterPoint

__all__ = [
    "SignalModel",
    "DictionarySpec",
    "build_dictionary",
    "canonical_json",
    "spec_hash",
    "sequence_payload",
    "model_payload",
    "field_fingerprint",
]

_MODEL_DEFAULTS = {"t1": None, "t2": None, "fwhm": 0.0, "center": 0.0,
                   "rf_scale": 1.0}


@dataclass(frozen=True)
class SignalModel:
    """Ensemble template with default parameter values.

    Parameters
    ----------
    defaults : mapping
        Baseline values for ``t1``, ``t2`` (required) and optionally
        ``fwhm``, ``center``, ``rf_scale``. Individual evaluations
        override any subset of them.
    n_points : int
        Offset-grid size used whenever ``fwhm > 0``.
    support_halfwidth : float
        Truncation radius of the offset grid in multiples of the fwhm.
    """

    defaults: dict = field(default_factory=dict)
    n_points: int = 101
    support_halfwidth: float = 5.0

    def __post_init__(self):
        merged = dict(_MODEL_DEFAULTS)
        merged.update({k: float(v) for k, v in dict(self.defaults).items()})
        missing = [k for k, v in merged.items() if v is None]
        if missing:
            raise ValueError(f"model defaults must include {missing}")
        # bounds checking is delegated to ParameterPoint
        ParameterPoint.from_mapping(merged)
        object.__setattr__(self, "defaults", merged)
        object.__setattr__(self, "n_points", int(self.n_points))
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    def params_at(self, point=None) -> dict[str, float]:
        """Defaults overridden by ``point`` (a ParameterPoint or mapping)."""
        merged = dict(self.defaults)
        if point is not None:
            overrides = point.as_dict() if isinstance(point, ParameterPoint) else dict(point)
            for name, value in overrides.items():
                if name not in merged:
                    raise ValueError(f"unknown parameter {name!r}")
                merged[name] = float(value)
        ParameterPoint.from_mapping(merged)
        return merged

    def ensemble(self, point=None) -> SpinEnsemble:
        """Spin ensemble at the given parameter values."""
        p = self.params_at(point)
        relax = RelaxationParams(p["t1"], p["t2"])
        if p["fwhm"] > 0.0 and self.n_points > 1:
            spec = LorentzianSpec(p["center"], p["fwhm"], self.n_points,
                                  self.support_halfwidth)
            return make_lorentzian_ensemble(spec, p["rf_scale"], relax)
        return SpinEnsemble((Isochromat(p["center"], p["rf_scale"], 1.0),), relax)

    def offsets_and_weights(self, point=None):
        ens = self.ensemble(point)
        return ens.offsets, ens.weights, ens.relaxation

    def trajectory(self, sequence: PulseSequence, point=None,
                   propagator: BlochPropagator | None = None):
        """Fingerprint trajectory ``(n_pulses, 2)`` for one parameter point.

        A prebuilt ``propagator`` for the same sequence and RF scale can be
        passed to amortize the per-pulse rotation setup across repeated
        evaluations (the hot path of curve fitting).
        """
        offsets, weights, relax = self.offsets_and_weights(point)
        p = self.params_at(point)
        if propagator is None:
            propagator = self.propagator(sequence, point)
        elif propagator.rf_scale != p["rf_scale"]:
            raise ValueError("propagator was built for a different rf_scale")
        post = propagator.run(relax, offsets)
        return np.sum(weights[:, None, None] * post[:, :, :2], axis=0)

    def propagator(self, sequence: PulseSequence, point=None) -> BlochPropagator:
        p = self.params_at(point)
        return BlochPropagator(sequence, rf_scale=p["rf_scale"])


@dataclass(frozen=True)
class DictionarySpec:
    """A signal model plus the parameter grid of the dictionary entries."""

    model: SignalModel
    grid: tuple[ParameterPoint, ...]

    def __post_init__(self):
        grid = tuple(self.grid)
        if len(grid) < 1:
            raise ValueError("dictionary grid must not be empty")
        if len(set(grid)) != len(grid):
            raise ValueError("dictionary grid contains duplicate points")
        for point in grid:
            self.model.params_at(point)
        object.__setattr__(self, "grid", grid)

    @property
    def size(self) -> int:
        return len(self.grid)


def build_dictionary(spec: DictionarySpec, sequence: PulseSequence) -> Dictionary:
    """Simulate every grid point of ``spec`` under ``sequence``."""
    trajectories = np.stack([spec.model.trajectory(sequence, point)
                             for point in spec.grid])
    return Dictionary(points=spec.grid, trajectories=trajectories,
                      field_fingerprint=field_fingerprint(sequence, spec.model))


# ---------------------------------------------------------------------------
# Canonical hashing of the generating field and model
# ---------------------------------------------------------------------------

def canonical_json(payload) -> str:
    """Deterministic JSON used for hashing and provenance records."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def spec_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()[:16]


def sequence_payload(sequence: PulseSequence) -> dict:
    return {
        "delay_t": sequence.delay_t,
        "pulses": [[float(x), float(y)] for x, y in sequence.pulses],
    }


def model_payload(model: SignalModel) -> dict:
    return {
        "defaults": {k: float(v) for k, v in model.defaults.items()},
        "n_points": model.n_points,
        "support_halfwidth": model.support_halfwidth,
    }


def field_fingerprint(sequence: PulseSequence, model: SignalModel) -> str:
    """Hash tying a dictionary to the exact field and ensemble model."""
    return spec_hash({"sequence": sequence_payload(sequence),
                      "model": model_payload(model)})
