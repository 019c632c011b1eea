"""Per-step assembly of the constrained MPC program.

At every sample step the receding-horizon controller minimizes a strongly
convex quadratic in the stacked per-vehicle controls, subject to box and
speed-band rows per vehicle plus one convex quadratic safety constraint per
vehicle and stage.  This module builds that program from the measured
platoon state; nothing here iterates or communicates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import PlatoonConfig, PlatoonState, WeightSchedule, error_coords
from .decomposition import StageBlocks, assemble_hessian_blocks, stage_blocks

__all__ = [
    "SafetyQuadratic",
    "QcqpProblem",
    "MembershipReport",
    "build_qcqp",
    "eval_objective",
    "check_membership",
]


@dataclass(frozen=True)
class SafetyQuadratic:
    """Safe-spacing constraint of one vehicle at one lookahead stage.

    The constraint value is
    ``quad * (a . u_own)^2 + lin_own . u_own + lin_prev . u_prev + const``
    and must stay <= 0.  ``a`` is the all-ones stage selector baked into
    ``quad``'s rank-one structure: lin_own / lin_prev are dense in the
    first s entries and zero beyond.  For the first vehicle the
    predecessor is the uncontrolled leader, whose predicted motion is
    folded into ``const`` (lin_prev is zero).
    """

    quad: float
    sum_len: int
    lin_own: np.ndarray
    lin_prev: np.ndarray
    const: float

    def value(self, u_own: np.ndarray, u_prev=None) -> float:
        s = float(np.sum(u_own[: self.sum_len]))
        val = self.quad * s * s + float(self.lin_own @ u_own) + self.const
        if u_prev is not None:
            val += float(self.lin_prev @ u_prev)
        return val


@dataclass(frozen=True)
class QcqpProblem:
    """One step's convex program in stacked vehicle-major controls.

    The Hessian is stored as its block-tridiagonal pieces (``diag[i]`` and
    ``off[i]`` coupling vehicles i, i+1); ``c`` is partitioned per vehicle.
    ``speed_lo``/``speed_hi`` are per-vehicle offsets ``v_min - v_i(k)``
    and ``v_max - v_i(k)`` bounding ``tau * cumsum(u_i)`` at every stage.
    """

    n: int
    horizon: int
    tau: float
    a_min: float
    a_max: float
    diag: tuple
    off: tuple
    c: np.ndarray
    speed_lo: np.ndarray
    speed_hi: np.ndarray
    safety: tuple
    u0: float

    def c_part(self, i: int) -> np.ndarray:
        p = self.horizon
        return self.c[i * p:(i + 1) * p]

    def u_block(self, u: np.ndarray, i: int) -> np.ndarray:
        p = self.horizon
        return np.asarray(u)[i * p:(i + 1) * p]

    def hessian_dense(self) -> np.ndarray:
        """Assemble the full Hessian (test/oracle path only)."""
        p, n = self.horizon, self.n
        W = np.zeros((n * p, n * p))
        for i in range(n):
            W[i * p:(i + 1) * p, i * p:(i + 1) * p] = self.diag[i]
            if i + 1 < n:
                W[i * p:(i + 1) * p, (i + 1) * p:(i + 2) * p] = self.off[i]
                W[(i + 1) * p:(i + 2) * p, i * p:(i + 1) * p] = self.off[i].T
        return W

    def hessian_matvec(self, u: np.ndarray) -> np.ndarray:
        p, n = self.horizon, self.n
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for i in range(n):
            blk = self.diag[i] @ self.u_block(u, i)
            if i + 1 < n:
                blk = blk + self.off[i] @ self.u_block(u, i + 1)
            if i > 0:
                blk = blk + self.off[i - 1].T @ self.u_block(u, i - 1)
            out[i * p:(i + 1) * p] = blk
        return out

    def to_debug_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "horizon": self.horizon,
            "tau": self.tau,
            "u0": self.u0,
            "diag_blocks": [b.tolist() for b in self.diag],
            "off_blocks": [b.tolist() for b in self.off],
            "c": self.c.tolist(),
            "accel_bounds": [self.a_min, self.a_max],
            "speed_lo": self.speed_lo.tolist(),
            "speed_hi": self.speed_hi.tolist(),
            "safety": [
                [
                    {
                        "quad": sq.quad,
                        "sum_len": sq.sum_len,
                        "lin_own": sq.lin_own.tolist(),
                        "lin_prev": sq.lin_prev.tolist(),
                        "const": sq.const,
                    }
                    for sq in per_vehicle
                ]
                for per_vehicle in self.safety
            ],
        })


def _linear_term(state: PlatoonState, cfg: PlatoonConfig, weights: WeightSchedule) -> np.ndarray:
    """Vehicle-major linear term of the objective.

    Built stage by stage from the predicted gap and rate errors under the
    frozen leader acceleration, then mapped through the transposed
    first-difference operator; only adjacent vehicles' measurements enter
    each vehicle's slice.
    """
    p, n, tau = cfg.horizon, cfg.n, cfg.tau
    err = error_coords(state, cfg)
    z, zp = err.gap_err, err.rate_err
    u0 = state.u0
    e1 = np.zeros(n)
    e1[0] = 1.0

    d = [z + s * tau * zp + 0.5 * tau ** 2 * s ** 2 * u0 * e1 for s in range(1, p + 1)]
    f = [zp + tau * s * u0 * e1 for s in range(1, p + 1)]

    c = np.zeros(n * p)
    for stage in range(1, p + 1):
        m = np.zeros(n)
        for s in range(stage, p + 1):
            m += 0.5 * tau ** 2 * (2 * (s - stage) + 1) * weights.q_gap[s - 1] * d[s - 1] \
                + tau * weights.q_rate[s - 1] * f[s - 1]
        # transposed first-difference: row j reads m[j] - m[j+1]
        g = -(m - np.concatenate([m[1:], [0.0]]))
        c[(stage - 1)::p] = g
    return c


def _safety_rows(state: PlatoonState, cfg: PlatoonConfig):
    """Safe-spacing quadratics for every vehicle and stage."""
    p, tau = cfg.horizon, cfg.tau
    out = []
    for i in range(1, cfg.n + 1):
        xi, vi = state.x[i], state.v[i]
        xprev, vprev = state.x[i - 1], state.v[i - 1]
        rows = []
        for s in range(1, p + 1):
            sel = np.zeros(p)
            sel[:s] = 1.0
            kappa = np.zeros(p)
            kappa[:s] = np.array([(2 * (s - j) - 1) / 2.0 for j in range(s)])
            quad = -tau ** 2 / (2.0 * cfg.a_min)
            lin_own = (cfg.reaction * tau - tau * (vi - cfg.v_min) / cfg.a_min) * sel \
                + tau ** 2 * kappa
            const = -(xprev - xi) - s * tau * (vprev - vi) + cfg.veh_len \
                + cfg.reaction * vi - (vi - cfg.v_min) ** 2 / (2.0 * cfg.a_min)
            if i == 1:
                # Leader prediction freezes its current acceleration, so the
                # predecessor contribution is a constant.
                lin_prev = np.zeros(p)
                const -= tau ** 2 * float(kappa.sum()) * state.u0
            else:
                lin_prev = -tau ** 2 * kappa
            rows.append(SafetyQuadratic(quad=quad, sum_len=s, lin_own=lin_own,
                                        lin_prev=lin_prev, const=const))
        out.append(tuple(rows))
    return tuple(out)


def build_qcqp(state: PlatoonState, cfg: PlatoonConfig, weights: WeightSchedule,
               blocks: StageBlocks | None = None) -> QcqpProblem:
    """Assemble the step's convex program from the measured state.

    ``blocks`` may carry precomputed stage-coupling Hessians (they depend
    only on the weights and sample time, not on the state).
    """
    if weights.horizon != cfg.horizon or weights.n != cfg.n:
        raise ValueError("weight schedule shape does not match the configuration")
    if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v))):
        raise ValueError("state must be finite")
    if blocks is None:
        blocks = stage_blocks(weights, cfg.tau)
    diag, off = assemble_hessian_blocks(blocks)
    c = _linear_term(state, cfg, weights)
    return QcqpProblem(
        n=cfg.n,
        horizon=cfg.horizon,
        tau=cfg.tau,
        a_min=cfg.a_min,
        a_max=cfg.a_max,
        diag=tuple(diag),
        off=tuple(off),
        c=c,
        speed_lo=cfg.v_min - state.v[1:],
        speed_hi=cfg.v_max - state.v[1:],
        safety=_safety_rows(state, cfg),
        u0=state.u0,
    )


def eval_objective(prob: QcqpProblem, u: np.ndarray) -> float:
    """Quadratic objective value (the state-only constant is dropped)."""
    u = np.asarray(u, dtype=float)
    return 0.5 * float(u @ prob.hessian_matvec(u)) + float(prob.c @ u)


@dataclass(frozen=True)
class MembershipReport:
    """Constraint residuals of a candidate control (values <= 0 feasible).

    ``box`` holds max(a_min - u, u - a_max) per vehicle and stage;
    ``speed`` the band residuals of the cumulative speed change; ``safety``
    the safe-spacing values.  ``feasible`` applies the tolerance uniformly.
    """

    box: np.ndarray
    speed: np.ndarray
    safety: np.ndarray
    tol: float

    @property
    def worst(self) -> float:
        return float(max(self.box.max(), self.speed.max(), self.safety.max()))

    @property
    def feasible(self) -> bool:
        return self.worst <= self.tol


def check_membership(prob: QcqpProblem, u: np.ndarray, tol: float = 1e-8) -> MembershipReport:
    """Evaluate every constraint of the step program at ``u``."""
    p, n, tau = prob.horizon, prob.n, prob.tau
    u = np.asarray(u, dtype=float).reshape(n, p)
    box = np.maximum(prob.a_min - u, u - prob.a_max)
    dv = tau * np.cumsum(u, axis=1)
    speed = np.maximum(prob.speed_lo[:, None] - dv, dv - prob.speed_hi[:, None])
    safety = np.zeros((n, p))
    for i in range(n):
        u_prev = u[i - 1] if i > 0 else None
        for s in range(p):
            safety[i, s] = prob.safety[i][s].value(u[i], u_prev)
    return MembershipReport(box=box, speed=speed, safety=safety, tol=tol)
