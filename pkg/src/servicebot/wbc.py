"""Velocity-level whole-body controller.

Three Cartesian tasks (left arm, right arm, planar base) are blended in a
single weighted QP over x = [base twist (3); qdot (n)]:

    min  sum_i w_i |S_i J_i x - S_i xdot_i*|^2 + reg |x|^2
    s.t. joint velocity limits, position-limit dampers, collision dampers

with xdot_i* = feedforward + K_C * pose_error(FK, reference). A postural
task then resolves the remaining redundancy in a second QP constrained to
preserve every primary task velocity exactly (equality-pinned null space).

The controller is open loop: it integrates its own commanded velocities
into an internal configuration and never reads the simulator's ground
truth back.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .model import Configuration, KinematicModel
from .qp import QPProblem, QPResult, solve_qp
from .spatial import Pose, Twist, integrate_planar, pose_error

TASK_IDS = ("left", "right", "base")

MODE_AUTONOMOUS = "autonomous"
MODE_TELEOP = "teleop"
MODE_IDLE = "idle"


@dataclass
class CartesianTask:
    frame: str
    reference: Pose
    feedforward: Twist = field(default_factory=Twist.zero)
    gain: np.ndarray = field(default_factory=lambda: np.full(6, 2.0))
    weight: float = 1.0
    mask: np.ndarray = field(default_factory=lambda: np.ones(6, dtype=bool))

    def __post_init__(self):
        self.gain = np.array(self.gain, dtype=float).reshape(6)
        self.mask = np.array(self.mask, dtype=bool).reshape(6)
        if np.any(self.gain <= 0.0):
            raise ValueError("Cartesian gains must be positive")
        if self.weight <= 0.0:
            raise ValueError("task weight must be positive")


@dataclass
class PosturalTask:
    q_d: np.ndarray
    gain: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        self.q_d = np.array(self.q_d, dtype=float).reshape(-1)
        if self.gain <= 0.0 or self.weight <= 0.0:
            raise ValueError("postural gain and weight must be positive")


@dataclass
class WBCSolution:
    nu: Twist                      # base twist, planar-lifted
    qdot: np.ndarray
    status: str                    # "optimal" | "infeasible" | "idle" | ...
    kkt_residual: float
    solve_time_s: float
    level2_fallback: bool = False  # level-2 infeasible, level-1 returned

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "idle")

    def as_vector(self, n: int) -> np.ndarray:
        x = np.zeros(3 + n)
        x[0], x[1] = self.nu.linear[0], self.nu.linear[1]
        x[2] = self.nu.angular[2]
        x[3:] = self.qdot
        return x


@dataclass
class ControllerConfig:
    rate_hz: float = 250.0
    gain_cartesian: np.ndarray = field(default_factory=lambda: np.full(6, 2.0))
    gain_postural: float = 1.0
    weights: dict = field(default_factory=lambda: {"left": 1.0, "right": 1.0, "base": 0.5})
    postural_weight: float = 1.0
    regularization: float = 1e-6
    position_damper: float = 0.5
    collision_damper: float = 0.5
    collision_min_distance: float = 0.01
    base_velocity_caps: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.5]))
    home: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz

    @staticmethod
    def from_json(text: str) -> "ControllerConfig":
        doc = json.loads(text)
        cfg = ControllerConfig()
        cfg.rate_hz = float(doc.get("rate_hz", cfg.rate_hz))
        cfg.gain_cartesian = np.array(doc.get("gain_cartesian", cfg.gain_cartesian), dtype=float)
        cfg.gain_postural = float(doc.get("gain_postural", cfg.gain_postural))
        cfg.weights = dict(doc.get("weights", cfg.weights))
        cfg.postural_weight = float(doc.get("postural_weight", cfg.postural_weight))
        cfg.regularization = float(doc.get("regularization", cfg.regularization))
        cfg.position_damper = float(doc.get("position_damper", cfg.position_damper))
        cfg.collision_damper = float(doc.get("collision_damper", cfg.collision_damper))
        cfg.collision_min_distance = float(doc.get("collision_min_distance_m",
                                                   cfg.collision_min_distance))
        cfg.base_velocity_caps = np.array(doc.get("base_velocity_caps",
                                                  cfg.base_velocity_caps), dtype=float)
        cfg.home = dict(doc.get("home", {}))
        return cfg


@dataclass
class ControllerState:
    """Owned exclusively by the control loop; commands land between steps."""

    config: Configuration          # the integrated open-loop model
    tasks: dict[str, CartesianTask]
    postural: PosturalTask
    dt: float
    mode: str = MODE_AUTONOMOUS
    params: ControllerConfig = field(default_factory=ControllerConfig)
    last_solution: WBCSolution | None = None


def init_controller(model: KinematicModel, measured: Configuration,
                    params: ControllerConfig | None = None) -> ControllerState:
    """Start the open loop at the measured configuration.

    Task references are set to the forward kinematics of the measured
    state, so the first step is a zero-error fixed point.
    """
    params = params or ControllerConfig()
    if not model.within_limits(measured.q):
        raise ValueError("measured configuration violates position limits")
    cfg = measured.copy()
    tree = model.fk_matrices(cfg)
    tasks = {
        "left": CartesianTask("ee_left", Pose.from_matrix(tree["ee_left"]),
                              gain=params.gain_cartesian,
                              weight=params.weights.get("left", 1.0)),
        "right": CartesianTask("ee_right", Pose.from_matrix(tree["ee_right"]),
                               gain=params.gain_cartesian,
                               weight=params.weights.get("right", 1.0)),
        "base": CartesianTask("base_link", Pose.from_matrix(tree["base_link"]),
                              gain=params.gain_cartesian,
                              weight=params.weights.get("base", 0.5),
                              mask=[True, True, False, False, False, True]),
    }
    postural = PosturalTask(cfg.q[model.postural_indices],
                            gain=params.gain_postural,
                            weight=params.postural_weight)
    return ControllerState(cfg, tasks, postural, params.dt, params=params)


def set_task_reference(state: ControllerState, task_id: str, reference: Pose,
                       feedforward: Twist | None = None) -> None:
    if task_id not in state.tasks:
        raise KeyError(f"unknown task '{task_id}'")
    state.tasks[task_id].reference = reference
    state.tasks[task_id].feedforward = feedforward or Twist.zero()


def set_posture(state: ControllerState, q_d) -> None:
    q_d = np.array(q_d, dtype=float).reshape(-1)
    if q_d.shape != state.postural.q_d.shape:
        raise ValueError(f"posture dimension {q_d.shape[0]} != "
                         f"{state.postural.q_d.shape[0]}")
    state.postural.q_d = q_d


def build_primary_qp(state: ControllerState, model: KinematicModel,
                     tree: dict | None = None,
                     jacobians: dict[str, np.ndarray] | None = None) -> QPProblem:
    """Assemble the level-1 problem: weighted task LS plus dampers."""
    cfg = state.config
    params = state.params
    nvar = 3 + model.n
    if tree is None:
        tree = model.fk_matrices(cfg)

    H = params.regularization * np.eye(nvar)
    g = np.zeros(nvar)
    for task_id, task in state.tasks.items():
        J = (jacobians or {}).get(task_id)
        if J is None:
            J = model.jacobian(cfg, task.frame, tree)
        current = Pose.from_matrix(tree[task.frame])
        xdot = task.feedforward.as_array() + task.gain * pose_error(current, task.reference)
        Jm, xm = J[task.mask], xdot[task.mask]
        H += task.weight * (Jm.T @ Jm)
        g -= task.weight * (Jm.T @ xm)

    lb = np.empty(nvar)
    ub = np.empty(nvar)
    lb[:3] = -params.base_velocity_caps
    ub[:3] = params.base_velocity_caps
    # position limits become velocity dampers that close smoothly at the bound
    eta_dt = params.position_damper / state.dt
    ub[3:] = np.minimum(model.vel_limit, eta_dt * (model.hi - cfg.q))
    lb[3:] = np.maximum(-model.vel_limit, eta_dt * (model.lo - cfg.q))

    rows, lo_rows = [], []
    xi_dt = params.collision_damper / state.dt
    for _, dist, grad in model.sphere_pairs_clearance(cfg, tree):
        rows.append(grad)
        lo_rows.append(-xi_dt * (dist - params.collision_min_distance))
    if rows:
        A = np.array(rows)
        return QPProblem(H=H, g=g, lb=lb, ub=ub, A=A,
                         lb_A=np.array(lo_rows), ub_A=np.full(len(rows), np.inf))
    return QPProblem(H=H, g=g, lb=lb, ub=ub)


def _solution_from(x: np.ndarray, model: KinematicModel, status: str,
                   kkt: float, dt_s: float, fallback=False) -> WBCSolution:
    return WBCSolution(Twist.from_planar(x[:3]), x[3:].copy(), status, kkt,
                       dt_s, level2_fallback=fallback)


def solve_hierarchy(state: ControllerState, model: KinematicModel) -> WBCSolution:
    """Level 1: Cartesian stack. Level 2: postural task in its null space."""
    t0 = time.perf_counter()
    cfg = state.config
    tree = model.fk_matrices(cfg)
    jacobians = {tid: model.jacobian(cfg, task.frame, tree)
                 for tid, task in state.tasks.items()}
    qp1 = build_primary_qp(state, model, tree, jacobians)
    r1 = solve_qp(qp1)
    if not r1.ok:
        return _solution_from(np.zeros(3 + model.n), model, r1.status, np.inf,
                              time.perf_counter() - t0)

    # pin every primary task velocity, then optimize the postural objective
    E = np.vstack([jacobians[tid][task.mask]
                   for tid, task in state.tasks.items()])
    d = E @ r1.x

    nvar = 3 + model.n
    post = 3 + model.postural_indices
    w = state.postural.weight
    H2 = state.params.regularization * np.eye(nvar)
    H2[post, post] += w
    g2 = np.zeros(nvar)
    q_post = cfg.q[model.postural_indices]
    g2[post] = -w * state.postural.gain * (state.postural.q_d - q_post)

    qp2 = QPProblem(H=H2, g=g2, lb=qp1.lb, ub=qp1.ub,
                    A=qp1.A, lb_A=qp1.lb_A, ub_A=qp1.ub_A, E=E, d=d)
    r2 = solve_qp(qp2)
    elapsed = time.perf_counter() - t0
    if not r2.ok:
        return _solution_from(r1.x, model, "optimal", r1.kkt_residual, elapsed,
                              fallback=True)
    kkt = max(r1.kkt_residual, r2.kkt_residual)
    sol = _solution_from(r2.x, model, "optimal", kkt, elapsed)
    if __debug__:
        assert kkt <= 1e-6, f"KKT residual {kkt} above contract"
        assert np.all(np.abs(sol.qdot) <= model.vel_limit + 1e-7)
    return sol


def control_step(state: ControllerState, model: KinematicModel,
                 commands=None) -> tuple[WBCSolution, ControllerState]:
    """One fixed-step cycle: apply commands, solve, integrate, emit.

    Solver failure emits zero velocities and leaves the internal model
    untouched; idle mode emits zeros without solving.
    """
    for command in commands or ():
        command(state)

    n = model.n
    if state.mode == MODE_IDLE:
        sol = _solution_from(np.zeros(3 + n), model, "idle", 0.0, 0.0)
        state.last_solution = sol
        return sol, state

    sol = solve_hierarchy(state, model)
    if sol.ok:
        q_new = state.config.q + sol.qdot * state.dt
        state.config.q = model.clamp_positions(q_new)
        nu_planar = (sol.nu.linear[0], sol.nu.linear[1], sol.nu.angular[2])
        state.config.base = integrate_planar(state.config.base, nu_planar, state.dt)
    else:
        sol = _solution_from(np.zeros(3 + n), model, sol.status, sol.kkt_residual,
                             sol.solve_time_s)
    state.last_solution = sol
    return sol, state


def home_configuration(model: KinematicModel, params: ControllerConfig) -> np.ndarray:
    """Joint vector of the configured home posture (unlisted joints at 0)."""
    q = np.zeros(model.n)
    for name, value in params.home.items():
        q[model.joint_index[name]] = float(value)
    return model.clamp_positions(q)
