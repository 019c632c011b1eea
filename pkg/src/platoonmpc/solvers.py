"""Distributed operator-splitting solvers for the per-step program.

Three engines share the same skeleton: a consensus projection over the
vehicle graph alternating with independent per-agent steps.

* ``solve_dr``: relaxed proximal iteration; each agent solves a small
  strongly convex QCQP every round.
* ``solve_three_op``: forward step on the smooth quadratic plus a
  Euclidean projection onto the local constraint set.
* ``solve_three_op_accel``: the same operators with an adaptive step-size
  recursion; the iterate error decays like O(1/(k+1)) under strong
  convexity.

Agents never read non-neighbor data: every cross-agent value moves through
the consensus projection, which the message fabric can carry verbatim.  A
centralized reference solver provides the "true" solution for accuracy
metrics.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .consensus import AugmentedLayout, MessageFabric, VehicleGraph, _project, fabric_project
from .decomposition import PdDecomposition
from .problem import QcqpProblem
from .smallqcqp import QuadConstraint, solve_qcqp

__all__ = [
    "SolverParams",
    "SolveReport",
    "LocalAgentProblem",
    "ProxSolveError",
    "default_params_for_horizon",
    "build_local_problems",
    "accel_gamma_next",
    "prox_local",
    "project_local",
    "solve_dr",
    "solve_three_op",
    "solve_three_op_accel",
    "solve_centralized",
    "warmup_initial_guess",
]

_VARIANTS = ("dr", "three-op", "three-op-accel")
_WARM_STARTS = ("prev-solution", "warmup-projection", "zero")


class ProxSolveError(RuntimeError):
    """A per-agent proximal subproblem failed; carries the agent index."""

    def __init__(self, agent: int, message: str):
        super().__init__(f"agent {agent}: {message}")
        self.agent = agent


@dataclass
class SolverParams:
    """Tuning constants of the distributed solvers.

    ``tol`` is the global stopping tolerance on consecutive iterates; each
    agent checks its own block against tol/n and the stop flag is combined
    over the graph (an O(diameter) flag flood in a real deployment; the
    simulation treats it as an all-reduce).
    """

    variant: str = "dr"
    alpha: float = 0.95
    rho: float = 0.3
    gamma: float | None = None
    lam: float | None = None
    eta: float = 0.2
    gamma0: float | None = None
    tol: float = 1e-3
    max_iters: int = 5000
    warm_start: str = "prev-solution"
    warmup_tol: float | None = None
    parallel: bool = False

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.warm_start not in _WARM_STARTS:
            raise ValueError(f"unknown warm start {self.warm_start!r}")


def default_params_for_horizon(p: int, variant: str = "dr") -> SolverParams:
    """Relaxation, proximal weight, and tolerance per horizon length."""
    table = {
        1: (0.95, 0.3, 1e-3),
        2: (0.95, 0.3, 2e-3),
        3: (0.95, 0.3, 5e-3),
        4: (0.8, 0.1, 7e-3),
        5: (0.8, 0.1, 1.25e-2),
    }
    alpha, rho, tol = table.get(p, table[5])
    return SolverParams(variant=variant, alpha=alpha, rho=rho, tol=tol,
                        warmup_tol=5e-4 if p == 1 else 1e-3)


@dataclass(frozen=True)
class LocalAgentProblem:
    """Everything agent i knows: its Hessian block over (own, neighbor
    copies), its slice of the linear term, its box/speed data, and its
    safe-spacing quadratics, which read the copy of the predecessor."""

    index: int
    var_order: tuple
    hessian: np.ndarray
    c_own: np.ndarray
    a_min: float
    a_max: float
    speed_lo: float
    speed_hi: float
    tau: float
    safety: tuple
    neighbors: tuple

    @property
    def horizon(self) -> int:
        return self.c_own.size

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]

    @property
    def prev_pos(self) -> int | None:
        prev = self.index - 1
        if prev < 0 or prev not in self.var_order:
            return None
        return self.var_order.index(prev)


def build_local_problems(prob: QcqpProblem, dec: PdDecomposition,
                         graph: VehicleGraph) -> list:
    """Slice the step program into per-agent problems in augmented layout
    (own block first, neighbor copies in ascending index)."""
    p = prob.horizon
    out = []
    for i in range(prob.n):
        part = dec.parts[i]
        order = tuple([i] + graph.neighbors(i))
        if set(order) != set(part.vehicles):
            raise ValueError(f"decomposition block of agent {i} does not match the graph")
        # permute the block from ascending-vehicle order to own-first order
        idx = [part.vehicles.index(v) for v in order]
        m = len(order)
        perm = np.zeros((m * p, m * p))
        for a, b in enumerate(idx):
            perm[a * p:(a + 1) * p, b * p:(b + 1) * p] = np.eye(p)
        out.append(LocalAgentProblem(
            index=i,
            var_order=order,
            hessian=perm @ part.matrix @ perm.T,
            c_own=prob.c_part(i).copy(),
            a_min=prob.a_min,
            a_max=prob.a_max,
            speed_lo=float(prob.speed_lo[i]),
            speed_hi=float(prob.speed_hi[i]),
            tau=prob.tau,
            safety=prob.safety[i],
            neighbors=tuple(graph.neighbors(i)),
        ))
    return out


class _Agent:
    """Cached per-agent machinery: constraint rows in local coordinates,
    the factorized unconstrained prox map, and active-set warm starts."""

    def __init__(self, lp: LocalAgentProblem, rho: float):
        self.lp = lp
        p, d = lp.horizon, lp.dim
        self.p, self.d = p, d
        self.c_tilde = np.zeros(d)
        self.c_tilde[:p] = lp.c_own
        self.rho = rho
        self.prox_mat = np.linalg.inv(rho * lp.hessian + np.eye(d))
        T = np.tril(np.ones((p, p)))
        G = np.zeros((4 * p, d))
        G[0:p, 0:p] = np.eye(p)
        G[p:2 * p, 0:p] = -np.eye(p)
        G[2 * p:3 * p, 0:p] = lp.tau * T
        G[3 * p:4 * p, 0:p] = -lp.tau * T
        self.G = G
        self.h = np.concatenate([
            np.full(p, lp.a_max),
            np.full(p, -lp.a_min),
            np.full(p, lp.speed_hi),
            np.full(p, -lp.speed_lo),
        ])
        self.quads = []
        prev = lp.prev_pos
        for sq in lp.safety:
            a = np.zeros(d)
            a[:sq.sum_len] = 1.0
            Q = 2.0 * sq.quad * np.outer(a, a)
            b = np.zeros(d)
            b[:p] = sq.lin_own
            if prev is not None:
                b[prev * p:(prev + 1) * p] = sq.lin_prev
            self.quads.append(QuadConstraint(Q=Q, b=b, c=sq.const))
        self.fast = 0
        self.full = 0
        self._prox_warm = None
        self._proj_warm = None

    def feasible(self, x, tol=1e-11) -> bool:
        if (self.G @ x - self.h).max() > tol:
            return False
        return all(qc.value(x) <= tol for qc in self.quads)

    def prox(self, y: np.ndarray) -> np.ndarray:
        x = self.prox_mat @ (y - self.rho * self.c_tilde)
        if self.feasible(x):
            self.fast += 1
            return x
        self.full += 1
        P = self.lp.hessian + np.eye(self.d) / self.rho
        q = self.c_tilde - y / self.rho
        res = solve_qcqp(P, q, self.G, self.h, self.quads,
                         x0=self._prox_warm[0] if self._prox_warm else None,
                         warm_active=self._prox_warm[1] if self._prox_warm else None)
        if res.status != "optimal":
            raise ProxSolveError(self.lp.index,
                                 f"prox subproblem stuck at KKT residual {res.kkt_residual:.2e}")
        self._prox_warm = (res.x, res.active)
        return res.x

    def project(self, y: np.ndarray) -> np.ndarray:
        if self.feasible(y):
            self.fast += 1
            return y.copy()
        self.full += 1
        res = solve_qcqp(np.eye(self.d), -y, self.G, self.h, self.quads,
                         x0=self._proj_warm[0] if self._proj_warm else None,
                         warm_active=self._proj_warm[1] if self._proj_warm else None)
        if res.status != "optimal":
            raise ProxSolveError(self.lp.index,
                                 f"projection stuck at KKT residual {res.kkt_residual:.2e}")
        self._proj_warm = (res.x, res.active)
        return res.x


def prox_local(lp: LocalAgentProblem, point: np.ndarray, rho: float) -> np.ndarray:
    """Proximal step of one agent's objective over its constraint set."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return _Agent(lp, rho).prox(np.asarray(point, dtype=float))


def project_local(lp: LocalAgentProblem, point: np.ndarray) -> np.ndarray:
    """Euclidean projection onto one agent's constraint set."""
    return _Agent(lp, 1.0).project(np.asarray(point, dtype=float))


@dataclass
class SolveReport:
    """Outcome of a distributed solve.

    ``agent_prox_stats[i]`` counts (closed-form fast path, full subsolver)
    proximal evaluations of agent i.
    """

    u_star: np.ndarray
    iterations: int
    residual: float
    converged: bool
    variant: str
    tol: float
    prox_fast: int = 0
    prox_full: int = 0
    agent_prox_stats: tuple = ()
    warmup_iterations: int = 0
    rel_error_vs_oracle: float | None = None
    z_final: np.ndarray | None = None
    residual_trace: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "variant": self.variant,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
            "prox_fast": self.prox_fast,
            "prox_full": self.prox_full,
            "agent_prox_stats": [list(s) for s in self.agent_prox_stats],
            "warmup_iterations": self.warmup_iterations,
            "rel_error_vs_oracle": self.rel_error_vs_oracle,
            "u_star": self.u_star.tolist(),
        })

    def save_residual_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,residual\n")
            for it, r in enumerate(self.residual_trace, start=1):
                fh.write(f"{it},{r!r}\n")


def _setup(problems, graph, params):
    p = problems[0].horizon
    layout = AugmentedLayout(graph, p)
    agents = [_Agent(lp, params.rho) for lp in problems]
    for lp, order in zip(problems, layout.var_order):
        if tuple(order) != lp.var_order:
            raise ValueError("local problem layout does not match the graph")
    return layout, agents


def _agent_map(fn, indices, parallel):
    if not parallel:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=min(8, len(indices))) as pool:
        return list(pool.map(fn, indices))


def _finish(layout, agents, w, iters, residual, converged, params, trace):
    return SolveReport(
        u_star=layout.stack_controls(w),
        iterations=iters,
        residual=residual,
        converged=converged,
        variant=params.variant,
        tol=params.tol,
        prox_fast=sum(a.fast for a in agents),
        prox_full=sum(a.full for a in agents),
        agent_prox_stats=tuple((a.fast, a.full) for a in agents),
        z_final=None,
        residual_trace=trace,
    )


def solve_dr(problems, graph: VehicleGraph, params: SolverParams, z0=None,
             fabric: MessageFabric | None = None, collect_trace: bool = False) -> SolveReport:
    """Relaxed proximal splitting over the consensus subspace.

    Each round projects the stacked iterate onto the consensus subspace,
    then every agent applies its proximal map to the reflected point and
    relaxes.  Agents stop once every local increment falls below tol/n.
    """
    layout, agents = _setup(problems, graph, params)
    z = np.zeros(layout.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    per_agent_tol = params.tol / graph.n
    two_alpha = 2.0 * params.alpha
    trace = []
    w = _project(z, layout) if fabric is None else fabric_project(z, layout, fabric)
    converged = False
    iters = 0
    residual = np.inf

    def agent_step(i):
        sl = layout.agent_slice(i)
        yi = 2.0 * w[sl] - z[sl]
        x = agents[i].prox(yi)
        return z[sl] + two_alpha * (x - w[sl])

    for iters in range(1, params.max_iters + 1):
        new_blocks = _agent_map(agent_step, range(graph.n), params.parallel)
        z_new = np.concatenate(new_blocks)
        diffs = [np.linalg.norm(z_new[layout.agent_slice(i)] - z[layout.agent_slice(i)])
                 for i in range(graph.n)]
        residual = float(np.linalg.norm(z_new - z))
        if collect_trace:
            trace.append(residual)
        z = z_new
        if max(diffs) <= per_agent_tol:
            converged = True
            break
        w = _project(z, layout) if fabric is None else fabric_project(z, layout, fabric)

    report = _finish(layout, agents, w, iters, residual, converged, params, trace)
    report.z_final = z
    return report


def accel_gamma_next(gamma: float, mut: float) -> float:
    """Step-size recursion of the accelerated scheme; with mut = 0 it
    leaves gamma unchanged."""
    return -mut * gamma ** 2 + np.sqrt((mut * gamma ** 2) ** 2 + gamma ** 2)


def _lipschitz(problems) -> float:
    return max(float(np.linalg.norm(lp.hessian, 2)) for lp in problems)


def _strong_convexity(problems) -> float:
    return min(float(np.linalg.eigvalsh(lp.hessian).min()) for lp in problems)


def solve_three_op(problems, graph: VehicleGraph, params: SolverParams, z0=None,
                   fabric: MessageFabric | None = None, collect_trace: bool = False) -> SolveReport:
    """Forward-backward style splitting with a gradient step on the smooth
    quadratic and a projection onto the local constraint sets."""
    layout, agents = _setup(problems, graph, params)
    L = _lipschitz(problems)
    gamma = params.gamma if params.gamma is not None else 1.9 / L
    if not (0.0 < gamma < 2.0 / L):
        raise ValueError(f"gamma must lie in (0, {2.0 / L:.6g})")
    lam_bound = 2.0 - gamma * L / 2.0
    lam = params.lam if params.lam is not None else 0.999 * lam_bound
    if not (0.0 < lam < lam_bound):
        raise ValueError(f"lam must lie in (0, {lam_bound:.6g})")

    z = np.zeros(layout.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    per_agent_tol = params.tol / graph.n
    trace = []
    w = _project(z, layout) if fabric is None else fabric_project(z, layout, fabric)
    converged = False
    iters = 0
    residual = np.inf

    def agent_step(i):
        sl = layout.agent_slice(i)
        wi = w[sl]
        yi = 2.0 * wi - z[sl] - gamma * (agents[i].lp.hessian @ wi + agents[i].c_tilde)
        x = agents[i].project(yi)
        return z[sl] + lam * (x - wi)

    for iters in range(1, params.max_iters + 1):
        new_blocks = _agent_map(agent_step, range(graph.n), params.parallel)
        z_new = np.concatenate(new_blocks)
        diffs = [np.linalg.norm(z_new[layout.agent_slice(i)] - z[layout.agent_slice(i)])
                 for i in range(graph.n)]
        residual = float(np.linalg.norm(z_new - z))
        if collect_trace:
            trace.append(residual)
        z = z_new
        if max(diffs) <= per_agent_tol:
            converged = True
            break
        w = _project(z, layout) if fabric is None else fabric_project(z, layout, fabric)

    report = _finish(layout, agents, w, iters, residual, converged, params, trace)
    report.z_final = z
    return report


def solve_three_op_accel(problems, graph: VehicleGraph, params: SolverParams, z0=None,
                         fabric: MessageFabric | None = None,
                         collect_trace: bool = False) -> SolveReport:
    """Accelerated variant with the adaptive step-size recursion

        gamma_{k+1} = -mu~ gamma_k^2 + sqrt((mu~ gamma_k^2)^2 + gamma_k^2),

    where mu~ is a fraction of the strong-convexity modulus.  With mu~ = 0
    the recursion leaves gamma unchanged."""
    layout, agents = _setup(problems, graph, params)
    L = _lipschitz(problems)
    mu = _strong_convexity(problems)
    if mu <= 0:
        raise ValueError("acceleration needs strongly convex agent objectives")
    mut = params.eta * mu
    g_bound = 2.0 / (L * (1.0 - params.eta))
    gamma_k = params.gamma0 if params.gamma0 is not None else 1.9 / (L * (1.0 - params.eta))
    if not (0.0 < gamma_k < g_bound):
        raise ValueError(f"gamma0 must lie in (0, {g_bound:.6g})")

    z = np.zeros(layout.dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    per_agent_tol = params.tol / graph.n
    trace = []
    w = _project(z, layout) if fabric is None else fabric_project(z, layout, fabric)
    v = (z - w) / gamma_k
    converged = False
    iters = 0
    residual = np.inf

    for iters in range(1, params.max_iters + 1):
        zv = z + gamma_k * v
        w = _project(zv, layout) if fabric is None else fabric_project(zv, layout, fabric)
        v = (zv - w) / gamma_k
        gamma_next = accel_gamma_next(gamma_k, mut)

        def agent_step(i):
            sl = layout.agent_slice(i)
            wi = w[sl]
            target = wi - gamma_next * v[sl] - gamma_next * (agents[i].lp.hessian @ wi
                                                             + agents[i].c_tilde)
            return agents[i].project(target)

        new_blocks = _agent_map(agent_step, range(graph.n), params.parallel)
        z_new = np.concatenate(new_blocks)
        gamma_k = gamma_next
        diffs = [np.linalg.norm(z_new[layout.agent_slice(i)] - z[layout.agent_slice(i)])
                 for i in range(graph.n)]
        residual = float(np.linalg.norm(z_new - z))
        if collect_trace:
            trace.append(residual)
        z = z_new
        if max(diffs) <= per_agent_tol:
            converged = True
            break

    report = _finish(layout, agents, w, iters, residual, converged, params, trace)
    report.z_final = z
    return report


SOLVERS = {
    "dr": solve_dr,
    "three-op": solve_three_op,
    "three-op-accel": solve_three_op_accel,
}


def solve_variant(problems, graph, params, z0=None, **kw) -> SolveReport:
    return SOLVERS[params.variant](problems, graph, params, z0=z0, **kw)


def _centralized_constraints(prob: QcqpProblem):
    n, p, tau = prob.n, prob.horizon, prob.tau
    N = n * p
    T = np.tril(np.ones((p, p)))
    G = np.zeros((4 * p * n, N))
    h = np.zeros(4 * p * n)
    for i in range(n):
        r = 4 * p * i
        cols = slice(i * p, (i + 1) * p)
        G[r:r + p, cols] = np.eye(p)
        h[r:r + p] = prob.a_max
        G[r + p:r + 2 * p, cols] = -np.eye(p)
        h[r + p:r + 2 * p] = -prob.a_min
        G[r + 2 * p:r + 3 * p, cols] = tau * T
        h[r + 2 * p:r + 3 * p] = prob.speed_hi[i]
        G[r + 3 * p:r + 4 * p, cols] = -tau * T
        h[r + 3 * p:r + 4 * p] = -prob.speed_lo[i]
    quads = []
    for i in range(n):
        for sq in prob.safety[i]:
            a = np.zeros(N)
            a[i * p:i * p + sq.sum_len] = 1.0
            Q = 2.0 * sq.quad * np.outer(a, a)
            b = np.zeros(N)
            b[i * p:(i + 1) * p] = sq.lin_own
            if i > 0:
                b[(i - 1) * p:i * p] = sq.lin_prev
            quads.append(QuadConstraint(Q=Q, b=b, c=sq.const))
    return G, h, quads


def solve_centralized(prob: QcqpProblem, tol: float = 1e-10, x0=None) -> np.ndarray:
    """Reference solution of the full step program to tight KKT residual."""
    G, h, quads = _centralized_constraints(prob)
    res = solve_qcqp(prob.hessian_dense(), prob.c, G, h, quads, x0=x0, kkt_tol=tol)
    if res.status != "optimal":
        raise RuntimeError(
            f"centralized solve did not reach tolerance (KKT residual {res.kkt_residual:.2e})")
    return res.x


def warmup_initial_guess(problems, graph: VehicleGraph, params: SolverParams):
    """Initial iterate from the constraint-free problem.

    Runs the proximal splitting with every constraint set replaced by the
    whole space, where the proximal map has the closed form
    ``(rho W_i + I)^{-1} (y - rho c_i)``, then projects each agent's block
    onto its constraint set once.  Returns (z0, iterations).
    """
    layout, agents = _setup(problems, graph, params)
    wu_tol = params.warmup_tol if params.warmup_tol is not None else params.tol
    per_agent_tol = wu_tol / graph.n
    two_alpha = 2.0 * params.alpha
    z = np.zeros(layout.dim)
    w = _project(z, layout)
    iters = 0
    for iters in range(1, params.max_iters + 1):
        z_new = z.copy()
        stop = True
        for i in range(graph.n):
            sl = layout.agent_slice(i)
            yi = 2.0 * w[sl] - z[sl]
            x = agents[i].prox_mat @ (yi - params.rho * agents[i].c_tilde)
            blk = z[sl] + two_alpha * (x - w[sl])
            if np.linalg.norm(blk - z[sl]) > per_agent_tol:
                stop = False
            z_new[sl] = blk
        z = z_new
        if stop:
            break
        w = _project(z, layout)
    w = _project(z, layout)
    z0 = np.concatenate([agents[i].project(w[layout.agent_slice(i)]) for i in range(graph.n)])
    return z0, iters
