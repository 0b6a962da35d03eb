"""Kinematic tree of the robot: joints, frames, limits, collision spheres.

The robot is a planar omnidirectional base carrying an actuated tree
(torso, two arms, head, grippers). The model is immutable after load;
forward kinematics and Jacobians are pure functions of (model, config).

Velocity variables are ordered [vx, vy, omega (base, body frame); qdot],
so every Jacobian here has 3 + n columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .spatial import PlanarPose, Pose, Quaternion

ROOT = "base_link"

_KINDS = ("revolute", "prismatic")


class ModelError(Exception):
    """Model document failed validation; .errors lists every violation."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class JointSpec:
    name: str
    kind: str               # revolute | prismatic
    parent: str
    axis: np.ndarray        # unit vector in the joint frame (after origin)
    origin: Pose            # parent -> joint
    lo: float
    hi: float
    vel: float              # velocity limit, > 0

    def __post_init__(self):
        # cached rotation generators for the 250 Hz loop
        x, y, z = self.axis
        self._K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        self._K2 = self._K @ self._K


@dataclass
class FrameSpec:
    name: str
    parent: str
    origin: Pose


@dataclass
class CollisionSphere:
    name: str
    frame: str
    offset: Pose
    radius: float


@dataclass
class CameraSpec:
    name: str
    frame: str
    fov_deg: float
    min_range: float
    max_range: float


@dataclass
class Configuration:
    """Generalized coordinates: planar base pose + joint vector."""

    base: PlanarPose
    q: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float).reshape(-1)

    def copy(self) -> "Configuration":
        return Configuration(self.base.copy(), self.q.copy())


def _rot_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product; avoids np.cross overhead on small stacks."""
    c = np.empty_like(a)
    c[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    c[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    c[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return c


class KinematicModel:
    """Validated joint/frame tree with limits, spheres and cameras.

    Joint order in the document defines the q indexing (n actuated joints).
    """

    def __init__(self, joints: list[JointSpec], frames: list[FrameSpec],
                 postural: list[str], spheres: list[CollisionSphere],
                 pairs: list[tuple[str, str]], cameras: list[CameraSpec]):
        self.joints = joints
        self.frames = frames
        self.postural_names = postural
        self.spheres = spheres
        self.pairs = pairs
        self.cameras = cameras

        self.n = len(joints)
        self.joint_index = {j.name: i for i, j in enumerate(joints)}
        self.postural_indices = np.array(
            [self.joint_index[name] for name in postural], dtype=int)
        self.lo = np.array([j.lo for j in joints])
        self.hi = np.array([j.hi for j in joints])
        self.vel_limit = np.array([j.vel for j in joints])
        self.sphere_by_name = {s.name: s for s in spheres}
        self.camera_by_name = {c.name: c for c in cameras}

        # entity -> (parent entity, fixed origin 4x4, joint index or None)
        self._entities: dict[str, tuple[str | None, np.ndarray, int | None]] = {
            ROOT: (None, np.eye(4), None)}
        for i, j in enumerate(joints):
            self._entities[j.name] = (j.parent, j.origin.to_matrix(), i)
        for f in frames:
            self._entities[f.name] = (f.parent, f.origin.to_matrix(), None)
        self._order = self._topological_order()
        # per-entity list of joint indices on the path from the root
        self._paths: dict[str, list[int]] = {}
        for name in self._order:
            parent, _, ji = self._entities[name]
            path = [] if parent is None else list(self._paths[parent])
            if ji is not None:
                path.append(ji)
            self._paths[name] = path

    def _topological_order(self) -> list[str]:
        order, seen = [], set()

        def visit(name, stack):
            if name in seen:
                return
            if name in stack:
                raise ModelError([f"cyclic parent references at '{name}'"])
            parent = self._entities[name][0]
            if parent is not None:
                visit(parent, stack | {name})
            seen.add(name)
            order.append(name)

        for name in self._entities:
            visit(name, frozenset())
        return order

    # -- kinematics ---------------------------------------------------------

    def has_frame(self, name: str) -> bool:
        return name in self._entities

    def frame_names(self) -> list[str]:
        return list(self._entities)

    def _joint_motion(self, joint: JointSpec, q: float) -> np.ndarray:
        T = np.eye(4)
        if joint.kind == "revolute":
            T[:3, :3] += math.sin(q) * joint._K + (1.0 - math.cos(q)) * joint._K2
        else:
            T[:3, 3] = joint.axis * q
        return T

    def fk_matrices(self, config: Configuration) -> dict[str, np.ndarray]:
        """World 4x4 transforms of every joint child frame and named frame."""
        out: dict[str, np.ndarray] = {}
        for name in self._order:
            parent, origin, ji = self._entities[name]
            if parent is None:
                out[name] = config.base.lift().to_matrix()
                continue
            T = out[parent] @ origin
            if ji is not None:
                T = T @ self._joint_motion(self.joints[ji], config.q[ji])
            out[name] = T
        return out

    def forward_kinematics(self, config: Configuration, frame: str) -> Pose:
        """World pose of a named frame."""
        if frame not in self._entities:
            raise KeyError(f"unknown frame '{frame}'")
        T = np.eye(4)
        chain = []
        name = frame
        while name is not None:
            chain.append(name)
            name = self._entities[name][0]
        for name in reversed(chain):
            parent, origin, ji = self._entities[name]
            if parent is None:
                T = config.base.lift().to_matrix()
            else:
                T = T @ origin
                if ji is not None:
                    T = T @ self._joint_motion(self.joints[ji], config.q[ji])
        return Pose.from_matrix(T)

    def jacobian(self, config: Configuration, frame: str,
                 tree: dict[str, np.ndarray] | None = None,
                 point: np.ndarray | None = None) -> np.ndarray:
        """Geometric Jacobian, 6 x (3+n): world twist of `frame` per unit
        [base body twist; qdot]. Reference point defaults to the frame origin.
        """
        if frame not in self._entities:
            raise KeyError(f"unknown frame '{frame}'")
        if tree is None:
            tree = self.fk_matrices(config)
        p = tree[frame][:3, 3] if point is None else np.asarray(point, dtype=float)
        J = np.zeros((6, 3 + self.n))

        # base columns: body-frame (vx, vy, omega) of the planar base
        ct, st = math.cos(config.base.theta), math.sin(config.base.theta)
        J[0, 0], J[1, 0] = ct, st
        J[0, 1], J[1, 1] = -st, ct
        r = p - tree[ROOT][:3, 3]
        J[0, 2], J[1, 2] = -r[1], r[0]       # z x r
        J[5, 2] = 1.0

        path = self._paths[frame]
        if path:
            k = len(path)
            Z = np.empty((k, 3))
            P = np.empty((k, 3))
            rev = np.empty(k, dtype=bool)
            for idx, ji in enumerate(path):
                joint = self.joints[ji]
                T = tree[joint.name]
                # axis is fixed in the pre-motion joint frame; for a revolute
                # joint the motion rotates about that same axis, so the child
                # frame expresses it identically
                Z[idx] = T[:3, :3] @ joint.axis
                P[idx] = T[:3, 3]
                rev[idx] = joint.kind == "revolute"
            rel = p - P
            lin = np.where(rev[:, None], _cross_rows(Z, rel), Z)
            cols = 3 + np.asarray(path)
            J[:3, cols] = lin.T
            J[3:, cols[rev]] = Z[rev].T
        return J

    def sphere_centers(self, config: Configuration,
                       tree: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        if tree is None:
            tree = self.fk_matrices(config)
        out = {}
        for s in self.spheres:
            T = tree[s.frame] @ s.offset.to_matrix()
            out[s.name] = T[:3, 3]
        return out

    def sphere_pairs_clearance(self, config: Configuration,
                               tree: dict[str, np.ndarray] | None = None):
        """Per declared pair: (pair id, center distance minus radii, d(dist)/d[base, q]).

        The gradient row is analytic: unit center-offset dotted with the
        difference of the two center Jacobians.
        """
        if tree is None:
            tree = self.fk_matrices(config)
        centers = self.sphere_centers(config, tree)
        jac: dict[str, np.ndarray] = {}

        def center_jac(name: str) -> np.ndarray:
            if name not in jac:
                s = self.sphere_by_name[name]
                jac[name] = self.jacobian(config, s.frame, tree,
                                          point=centers[name])[:3]
            return jac[name]

        results = []
        for a, b in self.pairs:
            sa, sb = self.sphere_by_name[a], self.sphere_by_name[b]
            ca, cb = centers[a], centers[b]
            delta = ca - cb
            dist = float(np.linalg.norm(delta))
            row = np.zeros(3 + self.n)
            if dist > 1e-12:
                u = delta / dist
                row = u @ (center_jac(a) - center_jac(b))
            results.append((f"{a}|{b}", dist - (sa.radius + sb.radius), row))
        return results

    def clamp_positions(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lo, self.hi)

    def within_limits(self, q: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(q >= self.lo - tol) and np.all(q <= self.hi + tol))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "joints": [{
                "name": j.name, "kind": j.kind, "parent": j.parent,
                "axis": [float(v) for v in j.axis],
                "origin": j.origin.to_dict(),
                "limits": {"lo": j.lo, "hi": j.hi, "vel": j.vel},
            } for j in self.joints],
            "frames": [{
                "name": f.name, "parent": f.parent, "origin": f.origin.to_dict(),
            } for f in self.frames],
            "postural": list(self.postural_names),
            "collision": {
                "spheres": [{
                    "name": s.name, "frame": s.frame,
                    "offset": s.offset.to_dict(), "radius_m": s.radius,
                } for s in self.spheres],
                "pairs": [[a, b] for a, b in self.pairs],
            },
            "cameras": [{
                "name": c.name, "frame": c.frame, "fov_deg": c.fov_deg,
                "min_range_m": c.min_range, "max_range_m": c.max_range,
            } for c in self.cameras],
        }


def serialize_model(model: KinematicModel) -> str:
    return json.dumps(model.to_dict(), indent=2)


def model_from_dict(doc: dict) -> KinematicModel:
    errors: list[str] = []
    names: set[str] = {ROOT}

    def check_name(name, what):
        if not name:
            errors.append(f"{what} with empty name")
        elif name in names:
            errors.append(f"duplicate name '{name}'")
        names.add(name)

    joints = []
    for jd in doc.get("joints", []):
        name = jd.get("name", "")
        check_name(name, "joint")
        kind = jd.get("kind", "")
        if kind not in _KINDS:
            errors.append(f"joint '{name}': unknown kind '{kind}'")
        axis = np.array(jd.get("axis", [0, 0, 1]), dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            errors.append(f"joint '{name}': axis is not unit-norm")
        lim = jd.get("limits", {})
        lo, hi = float(lim.get("lo", 0.0)), float(lim.get("hi", 0.0))
        vel = float(lim.get("vel", 0.0))
        if not lo < hi:
            errors.append(f"joint '{name}': position limits lo >= hi")
        if not vel > 0.0:
            errors.append(f"joint '{name}': velocity limit must be > 0")
        joints.append(JointSpec(name, kind, jd.get("parent", ROOT), axis,
                                Pose.from_dict(jd["origin"]), lo, hi, vel))

    frames = []
    for fd in doc.get("frames", []):
        name = fd.get("name", "")
        check_name(name, "frame")
        frames.append(FrameSpec(name, fd.get("parent", ROOT),
                                Pose.from_dict(fd["origin"])))

    for spec in joints + frames:
        if spec.parent not in names:
            errors.append(f"'{spec.name}': unknown parent '{spec.parent}'")

    postural = list(doc.get("postural", []))
    joint_names = {j.name for j in joints}
    for p in postural:
        if p not in joint_names:
            errors.append(f"postural joint '{p}' is not a joint")

    collision = doc.get("collision", {})
    spheres, sphere_names = [], set()
    for sd in collision.get("spheres", []):
        sname = sd.get("name", "")
        if sname in sphere_names:
            errors.append(f"duplicate collision sphere '{sname}'")
        sphere_names.add(sname)
        if sd.get("frame") not in names:
            errors.append(f"sphere '{sname}': unknown frame '{sd.get('frame')}'")
        radius = float(sd.get("radius_m", 0.0))
        if radius <= 0.0:
            errors.append(f"sphere '{sname}': radius must be > 0")
        spheres.append(CollisionSphere(sname, sd.get("frame", ROOT),
                                       Pose.from_dict(sd["offset"]), radius))
    pairs = []
    for pd in collision.get("pairs", []):
        a, b = pd[0], pd[1]
        for s in (a, b):
            if s not in sphere_names:
                errors.append(f"collision pair references unknown sphere '{s}'")
        pairs.append((a, b))

    cameras = []
    camera_names: set[str] = set()
    for cd in doc.get("cameras", []):
        cname = cd.get("name", "")
        if cname in camera_names:
            errors.append(f"duplicate camera '{cname}'")
        camera_names.add(cname)
        if cd.get("frame") not in names:
            errors.append(f"camera '{cname}': unknown frame '{cd.get('frame')}'")
        cameras.append(CameraSpec(cname, cd.get("frame", ROOT),
                                  float(cd.get("fov_deg", 60.0)),
                                  float(cd.get("min_range_m", 0.05)),
                                  float(cd.get("max_range_m", 5.0))))

    if errors:
        raise ModelError(errors)
    return KinematicModel(joints, frames, postural, spheres, pairs, cameras)


def load_model(text: str) -> KinematicModel:
    """Parse and validate a model description document (JSON text)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError([f"invalid JSON: {e}"]) from e
    return model_from_dict(doc)


def forward_kinematics(model: KinematicModel, config: Configuration, frame: str) -> Pose:
    return model.forward_kinematics(config, frame)


def jacobian(model: KinematicModel, config: Configuration, frame: str) -> np.ndarray:
    return model.jacobian(config, frame)


def sphere_pairs_clearance(model: KinematicModel, config: Configuration):
    return model.sphere_pairs_clearance(config)
