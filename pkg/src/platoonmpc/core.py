"""Platoon physics: configuration, state, leader motion profiles, and the
prefix-sum / first-difference operator algebra used throughout the package.

All values are immutable after construction; every function here is pure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "PlatoonConfig",
    "PlatoonState",
    "ErrorState",
    "LeaderProfile",
    "WeightSchedule",
    "reference_config",
    "initial_state",
    "step_dynamics",
    "error_coords",
    "error_step",
    "prefix_sum",
    "first_diff",
    "prefix_sum_matrix",
    "accel_gaps",
    "gaps_to_accel",
]


@dataclass(frozen=True)
class PlatoonConfig:
    """Physical and horizon parameters of the controlled platoon.

    Attributes
    ----------
    n : int
        Number of controlled vehicles (the uncontrolled lead vehicle is
        index 0 and not counted here).
    horizon : int
        Number of future control stages optimized each step; only the
        first stage is applied (receding horizon).
    tau : float
        Sample time [s].
    gap : float
        Desired constant spacing between adjacent vehicles [m].
    veh_len : float
        Effective vehicle length used in the safety bound [m].
    reaction : float
        Reaction time in the safety bound [s]; must be >= tau.
    a_min, a_max : float
        Deceleration / acceleration bounds [m/s^2]; a_min < 0 < a_max.
    v_min, v_max : float
        Speed bounds [m/s]; 0 <= v_min < v_max.
    """

    n: int
    horizon: int
    tau: float
    gap: float
    veh_len: float
    reaction: float
    a_min: float
    a_max: float
    v_min: float
    v_max: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two controlled vehicles")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        if not (0 <= self.v_min < self.v_max):
            raise ValueError("need 0 <= v_min < v_max")
        if self.reaction < self.tau:
            raise ValueError("reaction time must be >= tau")
        if self.gap <= 0 or self.veh_len <= 0:
            raise ValueError("gap and veh_len must be positive")

    def with_horizon(self, p: int) -> "PlatoonConfig":
        return replace(self, horizon=p)


def reference_config(n: int = 10, horizon: int = 1) -> PlatoonConfig:
    """Ten-vehicle reference platoon used by the built-in scenarios."""
    return PlatoonConfig(
        n=n,
        horizon=horizon,
        tau=1.0,
        gap=50.0,
        veh_len=5.0,
        reaction=1.0,
        a_min=-8.0,
        a_max=1.35,
        v_min=10.0,
        v_max=27.78,
    )


@dataclass(frozen=True)
class PlatoonState:
    """Positions and speeds of the lead vehicle (index 0) and n CAVs.

    ``u0`` is the lead vehicle's acceleration over the current sample
    interval [k*tau, (k+1)*tau).
    """

    x: np.ndarray
    v: np.ndarray
    u0: float
    k: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        if x.ndim != 1 or x.shape != v.shape or x.size < 3:
            raise ValueError("x and v must be 1-d arrays of equal size >= 3")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.isfinite(self.u0)):
            raise ValueError("state must be finite")
        if np.any(np.diff(x) >= 0):
            raise ValueError("positions must be strictly decreasing in index")

    @property
    def n(self) -> int:
        return self.x.size - 1


def initial_state(cfg: PlatoonConfig, speed: float = 25.0, u0: float = 0.0,
                  x0: float = 0.0) -> PlatoonState:
    """Equally spaced platoon at the desired gap, all at the same speed."""
    idx = np.arange(cfg.n + 1)
    return PlatoonState(x=x0 - cfg.gap * idx, v=np.full(cfg.n + 1, float(speed)), u0=u0)


@dataclass(frozen=True)
class ErrorState:
    """Gap errors and closing rates between adjacent vehicles.

    ``gap_err[i-1] = x_{i-1} - x_i - gap`` and
    ``rate_err[i-1] = v_{i-1} - v_i`` for i = 1..n.
    """

    gap_err: np.ndarray
    rate_err: np.ndarray


def error_coords(state: PlatoonState, cfg: PlatoonConfig) -> ErrorState:
    """Gap-error coordinates of a platoon state."""
    z = -np.diff(state.x) - cfg.gap
    zp = -np.diff(state.v)
    return ErrorState(gap_err=z, rate_err=zp)


def step_dynamics(state: PlatoonState, u: np.ndarray, u0_next: float,
                  tau: float) -> PlatoonState:
    """Advance every vehicle one sample step under double-integrator dynamics.

    The lead vehicle moves with the acceleration stored in ``state.u0``;
    the returned state carries ``u0_next`` as the leader's acceleration for
    the following interval.  No constraint is enforced here; keeping the
    commands admissible is the solver's job.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (state.n,) or not np.all(np.isfinite(u)):
        raise ValueError("u must be a finite vector of length n")
    acc = np.concatenate(([state.u0], u))
    x_new = state.x + tau * state.v + 0.5 * tau ** 2 * acc
    v_new = state.v + tau * acc
    return PlatoonState(x=x_new, v=v_new, u0=float(u0_next), k=state.k + 1)


def error_step(err: ErrorState, w: np.ndarray, tau: float) -> ErrorState:
    """One-step update of the error coordinates driven by the acceleration
    gaps ``w`` (lead-minus-follow differences of the applied controls)."""
    w = np.asarray(w, dtype=float)
    z = err.gap_err + tau * err.rate_err + 0.5 * tau ** 2 * w
    zp = err.rate_err + tau * w
    return ErrorState(gap_err=z, rate_err=zp)


# -- prefix-sum operator algebra ------------------------------------------

def prefix_sum(vec: np.ndarray) -> np.ndarray:
    """Cumulative sums: the dense lower-triangular all-ones matrix applied
    in O(n)."""
    return np.cumsum(np.asarray(vec, dtype=float))


def first_diff(vec: np.ndarray) -> np.ndarray:
    """First differences (first entry unchanged); inverse of prefix_sum."""
    vec = np.asarray(vec, dtype=float)
    out = vec.copy()
    out[1:] = vec[1:] - vec[:-1]
    return out


def prefix_sum_matrix(n: int) -> np.ndarray:
    """Dense lower-triangular all-ones matrix.

    Exists for test oracles only; production paths use the O(n)
    prefix-sum / first-difference forms.
    """
    return np.tril(np.ones((n, n)))


def accel_gaps(u: np.ndarray, u0: float) -> np.ndarray:
    """Differences of control input between adjacent vehicles,
    ``w_i = u_{i-1} - u_i`` with the leader acceleration as ``u_0``."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[0] = u0 - u[0]
    out[1:] = u[:-1] - u[1:]
    return out


def gaps_to_accel(w: np.ndarray, u0: float) -> np.ndarray:
    """Invert accel_gaps: ``u = -cumsum(w) + u0``."""
    return u0 - np.cumsum(np.asarray(w, dtype=float))


# -- leader motion profiles -------------------------------------------------

@dataclass(frozen=True)
class LeaderProfile:
    """Lead-vehicle acceleration profile on the sample grid.

    kind is one of ``piecewise`` (constant-acceleration segments),
    ``periodic`` (repeating pattern over a window) or ``trajectory``
    (explicit per-step samples, e.g. loaded from a CSV file).
    """

    kind: str
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def accel_at(self, k: int) -> float:
        if 0 <= k < self.samples.size:
            return float(self.samples[k])
        return 0.0

    def series(self, duration: int) -> np.ndarray:
        out = np.zeros(duration)
        m = min(duration, self.samples.size)
        out[:m] = self.samples[:m]
        return out

    @staticmethod
    def piecewise(segments, duration: int) -> "LeaderProfile":
        """segments: iterable of (k_first, k_last, accel), inclusive ranges."""
        samples = np.zeros(duration)
        for k_first, k_last, acc in segments:
            if not (0 <= k_first <= k_last < duration):
                raise ValueError("segment out of range")
            samples[k_first:k_last + 1] = acc
        return LeaderProfile(kind="piecewise", samples=samples)

    @staticmethod
    def periodic(pattern, k_first: int, k_last: int, duration: int) -> "LeaderProfile":
        """Repeat ``pattern`` over the inclusive window [k_first, k_last]."""
        pattern = np.asarray(pattern, dtype=float)
        samples = np.zeros(duration)
        for k in range(k_first, min(k_last, duration - 1) + 1):
            samples[k] = pattern[(k - k_first) % pattern.size]
        return LeaderProfile(kind="periodic", samples=samples)

    @staticmethod
    def from_samples(samples) -> "LeaderProfile":
        return LeaderProfile(kind="trajectory", samples=np.asarray(samples, dtype=float))

    @staticmethod
    def from_csv(path, tau: float) -> "LeaderProfile":
        """Load a trajectory file with header ``t,accel`` and one row per
        step; samples are resampled onto the tau grid by zero-order hold."""
        times, accels = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["t", "accel"]:
                raise ValueError("trajectory CSV must have header 't,accel'")
            for row in reader:
                times.append(float(row["t"]))
                accels.append(float(row["accel"]))
        if not times:
            raise ValueError("trajectory CSV is empty")
        times = np.asarray(times)
        accels = np.asarray(accels)
        duration = int(np.floor(times[-1] / tau)) + 1
        grid = np.arange(duration) * tau
        idx = np.searchsorted(times, grid, side="right") - 1
        return LeaderProfile(kind="trajectory", samples=accels[np.clip(idx, 0, None)])

    def validate_speeds(self, v0_init: float, cfg: PlatoonConfig, duration: int) -> None:
        """Check the produced leader speeds stay within (v_min, v_max]."""
        v = v0_init
        for k in range(duration):
            if not (cfg.v_min < v <= cfg.v_max):
                raise ValueError(f"leader speed {v:.3f} leaves ({cfg.v_min}, {cfg.v_max}] at k={k}")
            v += cfg.tau * self.accel_at(k)
        if not (cfg.v_min < v <= cfg.v_max):
            raise ValueError("leader speed leaves bounds at the final step")


# -- per-stage objective weights --------------------------------------------

@dataclass(frozen=True)
class WeightSchedule:
    """Diagonal objective weights per stage and vehicle.

    ``q_gap[s, i]``  penalizes the gap error of vehicle i at stage s+1,
    ``q_rate[s, i]`` penalizes its closing rate, and ``q_ride[s, i]``
    penalizes the acceleration-gap (ride comfort) term.  Gap and rate
    weights must be nonnegative and the ride weights strictly positive;
    these sign conditions make the assembled objective Hessian positive
    definite.
    """

    q_gap: np.ndarray
    q_rate: np.ndarray
    q_ride: np.ndarray

    def __post_init__(self):
        qg = np.atleast_2d(np.asarray(self.q_gap, dtype=float))
        qr = np.atleast_2d(np.asarray(self.q_rate, dtype=float))
        qw = np.atleast_2d(np.asarray(self.q_ride, dtype=float))
        object.__setattr__(self, "q_gap", qg)
        object.__setattr__(self, "q_rate", qr)
        object.__setattr__(self, "q_ride", qw)
        if not (qg.shape == qr.shape == qw.shape):
            raise ValueError("weight arrays must share the shape (stages, vehicles)")
        if not (np.all(np.isfinite(qg)) and np.all(np.isfinite(qr)) and np.all(np.isfinite(qw))):
            raise ValueError("weights must be finite")
        if np.any(qg < 0) or np.any(qr < 0):
            raise ValueError("gap and rate weights must be nonnegative")
        if np.any(qw <= 0):
            raise ValueError("ride weights must be strictly positive")

    @property
    def horizon(self) -> int:
        return self.q_gap.shape[0]

    @property
    def n(self) -> int:
        return self.q_gap.shape[1]

    def scaled(self, factor: float) -> "WeightSchedule":
        return WeightSchedule(self.q_gap * factor, self.q_rate * factor, self.q_ride * factor)
