"""Input validation helpers shared across the package.

These mirror the scikit-learn ``check_*`` idiom: every public entry point
funnels its array-like inputs through one of these functions so that shape
and finiteness errors surface with a consistent message, and so that all
downstream numerics can assume contiguous float64 data.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DegenerateSignalError",
    "ScenarioError",
    "check_finite_scalar",
    "check_positive_scalar",
    "check_signal",
    "check_weight_matrix",
]


class DegenerateSignalError(ValueError):
    """A signal with zero norm was passed where a direction is required.

    The normalized distance is undefined for the zero signal, so matching
    against one must fail loudly instead of reporting a spurious distance.
    """


class ScenarioError(RuntimeError):
    """A Monte Carlo study lost too many draws to be statistically usable."""


def check_finite_scalar(value, name: str) -> float:
    """Return ``value`` as a float, rejecting NaN and infinities."""
    out = float(value)
    if not np.isfinite(out):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return out


def check_positive_scalar(value, name: str, *, allow_zero: bool = False) -> float:
    out = check_finite_scalar(value, name)
    if allow_zero:
        if out < 0.0:
            raise ValueError(f"{name} must be >= 0, got {value!r}")
    elif out <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return out


def check_signal(g, *, n_samples: int | None = None, n_components: int | None = None,
                 name: str = "signal") -> np.ndarray:
    """Coerce a measured or simulated signal to a float64 ``(n, d)`` array.

    One dimensional input is treated as a single-component signal. The
    array is validated to be finite and non-empty; ``n_samples`` and
    ``n_components`` pin the expected shape when the caller knows it.
    """
    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 1-D or 2-D array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if n_samples is not None and arr.shape[0] != n_samples:
        raise ValueError(
            f"{name} has {arr.shape[0]} samples, expected {n_samples}")
    if n_components is not None and arr.shape[1] != n_components:
        raise ValueError(
            f"{name} has {arr.shape[1]} components, expected {n_components}")
    return arr


def check_weight_matrix(mu, n: int) -> np.ndarray:
    """Validate an ``n x n`` symmetric nonnegative weight matrix.

    The diagonal is ignored by every consumer (self-distance is zero), so
    only symmetry and nonnegativity are enforced.
    """
    arr = np.asarray(mu, dtype=np.float64)
    if arr.shape != (n, n):
        raise ValueError(f"weight matrix must have shape ({n}, {n}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight matrix contains non-finite values")
    if np.any(arr < 0.0):
        raise ValueError("weight matrix must be nonnegative")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12):
        raise ValueError("weight matrix must be symmetric")
    return arr
