"""Bloch dynamics of spin-1/2 ensembles under trains of instantaneous pulses.

The model is the rotating-frame Bloch equation with longitudinal and
transverse relaxation, a resonance offset ``omega`` and a radio-frequency
scaling ``alpha`` per isochromat. The control is a train of delta pulses
with per-pulse rotation areas ``(theta_x, theta_y)`` separated by a fixed
delay ``T``, so one period of the evolution factorizes exactly into

    M  ->  R_k (E M + b)

where ``E`` is the free-relaxation/precession operator over ``T``, ``b``
its recovery offset (the affine part of the dynamics, which keeps the
homogeneous component of the extended state equal to 1), and ``R_k`` the
rotation produced by pulse ``k`` with effective area ``alpha * theta``.

Conventions, fixed once and used everywhere:

* states are plain ``(mx, my, mz)`` arrays; thermal equilibrium is
  ``(0, 0, 1)`` and is the initial state unless stated otherwise;
* pulse ``k`` acts at ``t = k T`` and is preceded by a free interval of
  length ``T``; the signal is sampled immediately after each pulse;
* an x pulse of area ``pi/2`` maps ``(0, 0, 1)`` to ``(0, -1, 0)``, i.e.
  rotations follow the right-hand rule about the in-plane axis
  ``(theta_x, theta_y, 0)``;
* a positive offset precesses the transverse plane x towards y;
* all arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_finite_scalar, check_positive_scalar

__all__ = [
    "EQUILIBRIUM",
    "RelaxationParams",
    "Isochromat",
    "SpinEnsemble",
    "PulseSequence",
    "LorentzianSpec",
    "BlochPropagator",
    "rotate_pulse",
    "relax_free",
    "propagate_sequence",
    "make_lorentzian_ensemble",
    "simulate_fingerprint",
    "pulse_rotations",
    "pulse_rotation_derivatives",
    "relaxation_operator",
]

EQUILIBRIUM = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class RelaxationParams:
    """Longitudinal and transverse relaxation times, in seconds.

    Physical admissibility requires ``t2 <= 2 t1``; both times must be
    positive. The pair is shared by every isochromat of an ensemble.
    """

    t1: float
    t2: float

    def __post_init__(self):
        check_positive_scalar(self.t1, "t1")
        check_positive_scalar(self.t2, "t2")
        if self.t2 > 2.0 * self.t1 * (1.0 + 1e-12):
            raise ValueError(
                f"t2={self.t2} exceeds 2*t1={2.0 * self.t1}: unphysical relaxation pair")


@dataclass(frozen=True)
class Isochromat:
    """One coherently evolving sub-ensemble.

    Parameters
    ----------
    offset : float
        Resonance offset in rad/s.
    rf_scale : float
        Dimensionless scaling of the applied pulse areas, > 0.
    weight : float
        Probability mass of this isochromat within its ensemble, >= 0.
    """

    offset: float
    rf_scale: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        check_finite_scalar(self.offset, "offset")
        check_positive_scalar(self.rf_scale, "rf_scale")
        check_positive_scalar(self.weight, "weight", allow_zero=True)


@dataclass(frozen=True)
class SpinEnsemble:
    """A weighted collection of isochromats with common relaxation times."""

    isochromats: tuple[Isochromat, ...]
    relaxation: RelaxationParams

    def __post_init__(self):
        object.__setattr__(self, "isochromats", tuple(self.isochromats))
        if not self.isochromats:
            raise ValueError("ensemble needs at least one isochromat")
        total = np.sum(np.fromiter((iso.weight for iso in self.isochromats), dtype=float))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"isochromat weights sum to {total!r}, expected 1")

    @property
    def offsets(self) -> np.ndarray:
        return np.array([iso.offset for iso in self.isochromats])

    @property
    def rf_scales(self) -> np.ndarray:
        return np.array([iso.rf_scale for iso in self.isochromats])

    @property
    def weights(self) -> np.ndarray:
        return np.array([iso.weight for iso in self.isochromats])


@dataclass(frozen=True)
class PulseSequence:
    """A delta-pulse control field: per-pulse x/y areas plus a fixed delay.

    ``pulses`` is an ``(n_pulses, 2)`` array of rotation areas in radians;
    ``delay_t`` is the inter-pulse time in seconds.
    """

    pulses: np.ndarray
    delay_t: float

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.pulses, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"pulses must have shape (n, 2), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("sequence must contain at least one pulse")
        if not np.all(np.isfinite(arr)):
            raise ValueError("pulse areas must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pulses", arr)
        check_positive_scalar(self.delay_t, "delay_t")

    @property
    def count(self) -> int:
        return self.pulses.shape[0]

    @property
    def times(self) -> np.ndarray:
        """Sampling times ``k T`` for ``k = 1..n_pulses``."""
        return self.delay_t * np.arange(1, self.count + 1)


@dataclass(frozen=True)
class LorentzianSpec:
    """Truncated Lorentzian offset distribution.

    ``rho(omega) ~ 1 / (1 + 4 (omega - center)^2 / fwhm^2)`` discretized on
    a uniform grid of ``n_points`` offsets spanning
    ``center +- support_halfwidth * fwhm``.
    """

    center: float
    fwhm: float
    n_points: int = 101
    support_halfwidth: float = 5.0

    def __post_init__(self):
        check_finite_scalar(self.center, "center")
        check_positive_scalar(self.fwhm, "fwhm")
        if int(self.n_points) < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))
        check_positive_scalar(self.support_halfwidth, "support_halfwidth")


# ---------------------------------------------------------------------------
# Rotation and relaxation kernels
# ---------------------------------------------------------------------------

def _hat(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for a stack of 3-vectors, shape (..., 3, 3)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def pulse_rotations(pulses: np.ndarray, rf_scale: float = 1.0) -> np.ndarray:
    """Rotation matrices for a stack of pulse areas.

    Parameters
    ----------
    pulses : ndarray, shape (n, 2)
        Rotation areas ``(theta_x, theta_y)`` in radians.
    rf_scale : float
        RF inhomogeneity factor; effective areas are ``rf_scale * theta``.

    Returns
    -------
    ndarray, shape (n, 3, 3)
        ``R_k = exp(hat(v_k))`` with ``v_k = rf_scale * (theta_x, theta_y, 0)``,
        evaluated by the Rodrigues formula in a form stable at small angles.
    """
    pulses = np.atleast_2d(np.asarray(pulses, dtype=np.float64))
    v = np.zeros((pulses.shape[0], 3))
    v[:, :2] = rf_scale * pulses
    phi = np.linalg.norm(v, axis=1)
    k = _hat(v)
    k2 = k @ k
    # sin(phi)/phi and (1 - cos(phi))/phi^2 via sinc, exact at phi = 0
    a = np.sinc(phi / np.pi)
    b = 0.5 * np.sinc(phi / (2.0 * np.pi)) ** 2
    return np.eye(3) + a[:, None, None] * k + b[:, None, None] * k2


def pulse_rotation_derivatives(pulses: np.ndarray, rf_scale: float = 1.0
                               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotations and their partials with respect to the two pulse areas.

    For ``R(v) = exp(hat(v))`` the exact differential is
    ``dR/dv_i = R hat(J_r(v) e_i)`` with the right Jacobian of SO(3)

        J_r(v) = I - (1 - cos phi)/phi^2 hat(v) + (phi - sin phi)/phi^3 hat(v)^2.

    The x and y areas enter through ``v = rf_scale * (theta_x, theta_y, 0)``,
    so each partial carries an extra factor ``rf_scale``. The two rotation
    axes do not commute; this is the exact derivative, not ``R hat(e_i)``.

    Returns
    -------
    (rot, d_x, d_y) : ndarrays, each of shape (n, 3, 3)
    """
    pulses = np.atleast_2d(np.asarray(pulses, dtype=np.float64))
    v = np.zeros((pulses.shape[0], 3))
    v[:, :2] = rf_scale * pulses
    phi = np.linalg.norm(v, axis=1)
    k = _hat(v)
    k2 = k @ k

    a = np.sinc(phi / np.pi)
    b = 0.5 * np.sinc(phi / (2.0 * np.pi)) ** 2
    rot = np.eye(3) + a[:, None, None] * k + b[:, None, None] * k2

    # c = (phi - sin phi)/phi^3; series below 1e-2 avoids the cancellation
    small = phi < 1e-2
    phi_safe = np.where(small, 1.0, phi)
    c = np.where(small,
                 1.0 / 6.0 - phi ** 2 / 120.0 + phi ** 4 / 5040.0,
                 (phi_safe - np.sin(phi_safe)) / phi_safe ** 3)
    jac = np.eye(3) - b[:, None, None] * k + c[:, None, None] * k2

    d_x = rf_scale * rot @ _hat(jac[:, :, 0])
    d_y = rf_scale * rot @ _hat(jac[:, :, 1])
    return rot, d_x, d_y


def relaxation_operator(duration: float, relaxation: RelaxationParams,
                        offsets: np.ndarray | float = 0.0
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Free evolution operator over ``duration`` for one or more offsets.

    Returns the linear part ``E`` with shape ``(..., 3, 3)`` and the
    recovery offset ``b`` with shape ``(..., 3)`` such that the state maps
    as ``M -> E M + b``. Transverse components decay by ``exp(-t/T2)`` and
    precess by ``offset * t``; the longitudinal component relaxes towards 1.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    e1 = np.exp(-duration / relaxation.t1)
    e2 = np.exp(-duration / relaxation.t2)
    angle = offsets * duration
    c = e2 * np.cos(angle)
    s = e2 * np.sin(angle)
    e_op = np.zeros(offsets.shape + (3, 3))
    e_op[..., 0, 0] = c
    e_op[..., 0, 1] = -s
    e_op[..., 1, 0] = s
    e_op[..., 1, 1] = c
    e_op[..., 2, 2] = e1
    b = np.zeros(offsets.shape + (3,))
    b[..., 2] = 1.0 - e1
    return e_op, b


def _check_state(state, name: str = "state") -> np.ndarray:
    arr = np.asarray(state, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector (mx, my, mz), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def rotate_pulse(state, theta_x: float, theta_y: float,
                 rf_scale: float = 1.0) -> np.ndarray:
    """Apply one delta pulse of areas ``(theta_x, theta_y)`` to a state.

    The rotation axis is ``(theta_x, theta_y, 0)`` and the angle is
    ``rf_scale * hypot(theta_x, theta_y)``; the norm of the magnetization
    is preserved to round-off.
    """
    arr = _check_state(state)
    check_finite_scalar(theta_x, "theta_x")
    check_finite_scalar(theta_y, "theta_y")
    check_positive_scalar(rf_scale, "rf_scale")
    rot = pulse_rotations(np.array([[theta_x, theta_y]]), rf_scale)[0]
    return rot @ arr


def relax_free(state, duration: float, relaxation: RelaxationParams,
               offset: float = 0.0) -> np.ndarray:
    """Free relaxation and precession of a state for ``duration`` seconds."""
    arr = _check_state(state)
    if not duration >= 0.0:
        raise ValueError(f"duration must be >= 0, got {duration!r}")
    check_finite_scalar(offset, "offset")
    if np.isinf(duration):
        return EQUILIBRIUM.copy()
    e_op, b = relaxation_operator(duration, relaxation, offset)
    return e_op @ arr + b


class BlochPropagator:
    """Batch propagation of a pulse sequence with precomputed rotations.

    The per-pulse rotation matrices depend only on the sequence and the RF
    scale, so they are built once and reused across repeated evaluations
    with different relaxation times or offsets (the hot path of curve
    fitting and dictionary generation). Batching is over isochromats,
    dictionary entries, or any mix of the two.
    """

    def __init__(self, sequence: PulseSequence, rf_scale: float = 1.0):
        self.sequence = sequence
        self.rf_scale = rf_scale
        self._rotations = pulse_rotations(sequence.pulses, rf_scale)

    def run(self, relaxation: RelaxationParams, offsets,
            initial: np.ndarray | None = None,
            keep_pre_pulse: bool = False):
        """Propagate a batch of isochromats through the whole sequence.

        Parameters
        ----------
        relaxation : RelaxationParams
            Shared T1/T2 for the batch.
        offsets : array-like, shape (B,)
            Resonance offset of each batch element.
        initial : ndarray, shape (3,) or (B, 3), optional
            Start state; thermal equilibrium by default.
        keep_pre_pulse : bool
            Also return the states just before each pulse (needed by the
            gradient backward sweep).

        Returns
        -------
        post : ndarray, shape (B, n_pulses, 3)
            State immediately after each pulse.
        pre : ndarray, shape (B, n_pulses, 3), only if ``keep_pre_pulse``.
        """
        return self.run_arrays(relaxation.t1, relaxation.t2, offsets,
                               initial=initial, keep_pre_pulse=keep_pre_pulse)

    def run_arrays(self, t1, t2, offsets, initial: np.ndarray | None = None,
                   keep_pre_pulse: bool = False):
        """Like :meth:`run` but with per-element relaxation times.

        ``t1``, ``t2`` and ``offsets`` broadcast against each other, which
        lets one batch mix isochromats of systems with different
        relaxation parameters (dictionary entries, finite-difference
        probes).
        """
        offsets = np.atleast_1d(np.asarray(offsets, dtype=np.float64))
        n_batch = offsets.shape[0]
        n_pulses = self.sequence.count
        delay = self.sequence.delay_t
        e1 = np.broadcast_to(np.exp(-delay / np.asarray(t1, dtype=np.float64)),
                             (n_batch,))
        e2 = np.exp(-delay / np.asarray(t2, dtype=np.float64))
        angle = offsets * delay
        ecos = np.broadcast_to(e2 * np.cos(angle), (n_batch,))
        esin = np.broadcast_to(e2 * np.sin(angle), (n_batch,))
        recov = 1.0 - e1

        if initial is None:
            state = np.tile(EQUILIBRIUM, (n_batch, 1))
        else:
            state = np.array(np.broadcast_to(np.asarray(initial, dtype=np.float64),
                                             (n_batch, 3)))

        post = np.empty((n_batch, n_pulses, 3))
        pre = np.empty((n_batch, n_pulses, 3)) if keep_pre_pulse else None
        for k in range(n_pulses):
            relaxed = np.empty_like(state)
            relaxed[:, 0] = ecos * state[:, 0] - esin * state[:, 1]
            relaxed[:, 1] = esin * state[:, 0] + ecos * state[:, 1]
            relaxed[:, 2] = e1 * state[:, 2] + recov
            if keep_pre_pulse:
                pre[:, k] = relaxed
            state = relaxed @ self._rotations[k].T
            post[:, k] = state
        if keep_pre_pulse:
            return post, pre
        return post


def propagate_sequence(initial, seq: PulseSequence, iso: Isochromat,
                       relaxation: RelaxationParams) -> np.ndarray:
    """States sampled just after every pulse of a sequence.

    Pulse ``k`` acts at ``t = k T`` after a free interval of length ``T``;
    the returned array has one row per pulse.
    """
    start = _check_state(initial, "initial")
    prop = BlochPropagator(seq, rf_scale=iso.rf_scale)
    post = prop.run(relaxation, np.array([iso.offset]), initial=start)
    return post[0]


def make_lorentzian_ensemble(spec: LorentzianSpec, rf_scale: float,
                             relaxation: RelaxationParams) -> SpinEnsemble:
    """Discretize a Lorentzian offset distribution into a spin ensemble.

    A single-point grid degenerates to one isochromat at the center. The
    weights are the Lorentzian density on the grid, renormalized to sum
    exactly to 1.
    """
    if spec.n_points == 1:
        return SpinEnsemble((Isochromat(spec.center, rf_scale, 1.0),), relaxation)
    half = spec.support_halfwidth * spec.fwhm
    grid = np.linspace(spec.center - half, spec.center + half, spec.n_points)
    rho = 1.0 / (1.0 + 4.0 * (grid - spec.center) ** 2 / spec.fwhm ** 2)
    rho /= rho.sum()
    # guard against accumulated round-off in the running sum
    rho[-1] += 1.0 - rho.sum()
    isochromats = tuple(Isochromat(float(omega), rf_scale, float(mass))
                        for omega, mass in zip(grid, rho))
    return SpinEnsemble(isochromats, relaxation)


def simulate_fingerprint(ensemble: SpinEnsemble, seq: PulseSequence) -> np.ndarray:
    """Ensemble-averaged ``(mx, my)`` just after each pulse.

    Returns an ``(n_pulses, 2)`` trajectory. The average runs over
    isochromats in index order with plain weighted summation, so repeated
    calls are bit-identical.
    """
    offsets = ensemble.offsets
    scales = ensemble.rf_scales
    weights = ensemble.weights
    samples = np.empty((len(offsets), seq.count, 2))
    for alpha in np.unique(scales):
        mask = scales == alpha
        prop = BlochPropagator(seq, rf_scale=float(alpha))
        post = prop.run(ensemble.relaxation, offsets[mask])
        samples[mask] = post[:, :, :2]
    return np.sum(weights[:, None, None] * samples, axis=0)
