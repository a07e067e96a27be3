"""Fingerprint dictionaries, the normalized distance, and recognition.

A dictionary pairs parameter tuples with simulated fingerprint
trajectories. Matching happens through the scale-invariant squared
distance between normalized signals,

    D[f, g] = || f/||f|| - g/||g|| ||^2 = 2 (1 - cos angle(f, g)),

which lives in ``[0, 4]`` and depends only on the angle between the two
signals. The quality of a dictionary of ``N`` entries is summarized by the
normalized average pairwise distance

    C_N = 1/(2 N^2) sum_{m,n} mu_mn D[f_m, f_n],

bounded by 1 for unit weights, with the bound attained exactly by regular
simplex configurations of the normalized entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import DegenerateSignalError, check_signal, check_weight_matrix

__all__ = [
    "PARAMETER_BOUNDS",
    "ParameterPoint",
    "Dictionary",
    "RecognitionMap",
    "MatchResult",
    "inner_product",
    "distance",
    "distance_matrix",
    "figure_of_merit",
    "recognition_map",
    "recognize",
]

_NORM_FLOOR = 1e-150

# Admissible ranges of the named physical parameters. Lower bounds are
# exclusive except where zero is meaningful (a zero fwhm denotes a
# homogeneous ensemble).
PARAMETER_BOUNDS: dict[str, tuple[float, float]] = {
    "t1": (0.0, math.inf),
    "t2": (0.0, math.inf),
    "fwhm": (0.0, math.inf),
    "center": (-math.inf, math.inf),
    "rf_scale": (0.0, math.inf),
}
_ZERO_ALLOWED = {"fwhm"}


@dataclass(frozen=True)
class ParameterPoint:
    """An ordered tuple of named physical parameters.

    Units are fixed by convention: times in seconds, ``fwhm`` and
    ``center`` in rad/s, ``rf_scale`` dimensionless.
    """

    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        names = tuple(self.names)
        values = tuple(float(v) for v in self.values)
        if len(names) < 1:
            raise ValueError("parameter point needs at least one parameter")
        if len(names) != len(values):
            raise ValueError("names and values differ in length")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        for name, value in zip(names, values):
            if name not in PARAMETER_BOUNDS:
                raise ValueError(
                    f"unknown parameter {name!r}; known: {sorted(PARAMETER_BOUNDS)}")
            lo, hi = PARAMETER_BOUNDS[name]
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            ok_low = value >= lo if name in _ZERO_ALLOWED else value > lo
            if not (ok_low and value <= hi):
                raise ValueError(f"{name}={value} outside admissible range ({lo}, {hi})")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_mapping(cls, mapping) -> "ParameterPoint":
        items = list(mapping.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def replace(self, **updates: float) -> "ParameterPoint":
        merged = self.as_dict()
        for name, value in updates.items():
            merged[name] = float(value)
        return ParameterPoint.from_mapping(merged)


@dataclass
class Dictionary:
    """Parameter points paired with their simulated fingerprints.

    ``trajectories`` has shape ``(N, n_samples, d)``; every entry shares
    the sampling grid. ``field_fingerprint`` is the hash of the pulse
    sequence and ensemble model that generated the trajectories, used to
    reject stale dictionary/field pairs on load.
    """

    points: tuple[ParameterPoint, ...]
    trajectories: np.ndarray
    field_fingerprint: str = ""

    def __post_init__(self):
        self.points = tuple(self.points)
        arr = np.asarray(self.trajectories, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ValueError(
                f"trajectories must have shape (N, n_samples, d), got {arr.shape}")
        if arr.shape[0] != len(self.points):
            raise ValueError(
                f"{len(self.points)} parameter points but {arr.shape[0]} trajectories")
        if len(self.points) < 1:
            raise ValueError("dictionary needs at least one entry")
        if not np.all(np.isfinite(arr)):
            raise ValueError("trajectories contain non-finite values")
        if len(set(self.points)) != len(self.points):
            raise ValueError("dictionary entries must have distinct parameter points")
        self.trajectories = arr

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def n_samples(self) -> int:
        return self.trajectories.shape[1]

    @property
    def n_components(self) -> int:
        return self.trajectories.shape[2]


@dataclass
class RecognitionMap:
    """Pairwise distance matrix of a dictionary with its contrast statistic."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)

    @property
    def min_off_diagonal(self) -> float:
        """Smallest pairwise distance between distinct entries (nan for N=1)."""
        n = self.matrix.shape[0]
        if n < 2:
            return math.nan
        mask = ~np.eye(n, dtype=bool)
        return float(self.matrix[mask].min())


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one signal against a dictionary."""

    index: int
    point: ParameterPoint
    residual: float
    tie: bool = False


def inner_product(f, g) -> float:
    """Discrete scalar product: sum over samples and components.

    The uniform Riemann weight (the sample spacing) is omitted because it
    cancels in every normalized quantity built from this product.
    """
    f = check_signal(f, name="f")
    g = check_signal(g, n_samples=f.shape[0], n_components=f.shape[1], name="g")
    return float(np.sum(f * g))


def _checked_norm(flat: np.ndarray, name: str) -> float:
    norm = float(np.linalg.norm(flat))
    if norm < _NORM_FLOOR:
        raise DegenerateSignalError(
            f"{name} has zero norm: the normalized distance is undefined")
    return norm


def distance(f, g) -> float:
    """Squared distance between the normalized signals, in ``[0, 4]``.

    Raises
    ------
    DegenerateSignalError
        If either signal has zero norm. A dead signal cannot be matched
        and must surface to the caller instead of comparing equal to
        everything.
    """
    f = check_signal(f, name="f")
    g = check_signal(g, n_samples=f.shape[0], n_components=f.shape[1], name="g")
    f_flat = f.ravel()
    g_flat = g.ravel()
    nf = _checked_norm(f_flat, "f")
    ng = _checked_norm(g_flat, "g")
    cos = float(np.dot(f_flat, g_flat)) / (nf * ng)
    cos = min(1.0, max(-1.0, cos))
    return 2.0 * (1.0 - cos)


def _normalized_rows(trajectories: np.ndarray) -> np.ndarray:
    flat = trajectories.reshape(trajectories.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms < _NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise DegenerateSignalError(f"dictionary entry {bad} has zero norm")
    return flat / norms[:, None]


def _as_trajectory_stack(entries) -> np.ndarray:
    if isinstance(entries, Dictionary):
        return entries.trajectories
    arr = np.asarray(entries, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"expected (N, n_samples, d) trajectories, got {arr.shape}")
    return arr


def distance_matrix(entries) -> np.ndarray:
    """Full symmetric matrix of pairwise distances with a zero diagonal."""
    hat = _normalized_rows(_as_trajectory_stack(entries))
    cos = np.clip(hat @ hat.T, -1.0, 1.0)
    mat = 2.0 * (1.0 - cos)
    np.fill_diagonal(mat, 0.0)
    return mat


def figure_of_merit(entries, weights=None) -> float:
    """Normalized average pairwise distance ``C_N`` of a dictionary.

    ``entries`` is a :class:`Dictionary` or an ``(N, n_samples, d)`` stack.
    With unit weights the value lies in ``[0, 1]``.
    """
    mat = distance_matrix(entries)
    n = mat.shape[0]
    if weights is None:
        total = float(mat.sum())
    else:
        mu = check_weight_matrix(weights, n)
        total = float((mu * mat).sum())
    return total / (2.0 * n * n)


def recognition_map(entries) -> RecognitionMap:
    """Pairwise distance map of a dictionary (the contrast diagnostic)."""
    return RecognitionMap(distance_matrix(entries))


def recognize(dictionary: Dictionary, g) -> MatchResult:
    """Return the dictionary entry minimizing the distance to ``g``.

    Exact ties are broken towards the lowest index and flagged: a tied
    signal sits on the boundary between two cells of the recognition
    partition, so the match is ambiguous.
    """
    g = check_signal(g, n_samples=dictionary.n_samples,
                     n_components=dictionary.n_components, name="signal")
    g_flat = g.ravel()
    ng = _checked_norm(g_flat, "signal")
    hat = _normalized_rows(dictionary.trajectories)
    cos = np.clip(hat @ (g_flat / ng), -1.0, 1.0)
    dists = 2.0 * (1.0 - cos)
    index = int(np.argmin(dists))
    tie = bool(np.sum(dists == dists[index]) > 1)
    return MatchResult(index=index, point=dictionary.points[index],
                       residual=float(dists[index]), tie=tie)
