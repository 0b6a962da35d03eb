"""SE(3)/SE(2) primitives shared by every part of the stack.

Conventions:
  - Quaternions are Hamilton, stored [w, x, y, z], unit norm, canonicalized
    so that w >= 0 (hemisphere flip keeps error signs deterministic).
  - A Pose maps points from its own frame to the parent frame:
    p_parent = R(q) @ p_local + t.
  - Twists are world-frame (linear m/s, angular rad/s) unless noted.
  - The planar base pose lives in SE(2); its body twist is (vx, vy, omega).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TAU = 2.0 * math.pi

_NORM_TOL = 1e-9


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = theta % TAU
    if t > math.pi:
        t -= TAU
    return t


class Quaternion:
    """Unit quaternion [w, x, y, z] with w >= 0."""

    __slots__ = ("w", "x", "y", "z")

    def __init__(self, w: float, x: float, y: float, z: float):
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n < _NORM_TOL:
            raise ValueError("quaternion norm is zero")
        w, x, y, z = w / n, x / n, y / n, z / n
        if w < 0.0 or (w == 0.0 and _vec_sign_flip(x, y, z)):
            w, x, y, z = -w, -x, -y, -z
        self.w, self.x, self.y, self.z = w, x, y, z

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quaternion":
        a = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(a))
        if n < _NORM_TOL:
            raise ValueError("rotation axis has zero norm")
        h = 0.5 * angle
        s = math.sin(h) / n
        return Quaternion(math.cos(h), a[0] * s, a[1] * s, a[2] * s)

    @staticmethod
    def from_rotvec(rotvec) -> "Quaternion":
        r = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(r))
        if angle < 1e-12:
            # first-order quaternion; constructor renormalizes
            return Quaternion(1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2])
        return Quaternion.from_axis_angle(r / angle, angle)

    @staticmethod
    def from_matrix(R) -> "Quaternion":
        """Shepperd's method; R must be a rotation matrix."""
        R = np.asarray(R, dtype=float)
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            return Quaternion(
                0.25 * s,
                (R[2, 1] - R[1, 2]) / s,
                (R[0, 2] - R[2, 0]) / s,
                (R[1, 0] - R[0, 1]) / s,
            )
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            return Quaternion(
                (R[2, 1] - R[1, 2]) / s, 0.25 * s,
                (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s,
            )
        if i == 1:
            s = math.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            return Quaternion(
                (R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                0.25 * s, (R[1, 2] + R[2, 1]) / s,
            )
        s = math.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
        return Quaternion(
            (R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
            (R[1, 2] + R[2, 1]) / s, 0.25 * s,
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def multiply(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        u = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(u, v)
        return v + self.w * t + np.cross(u, t)

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def angle_to(self, other: "Quaternion") -> float:
        """Geodesic angle between the two rotations, in [0, pi].

        atan2 form stays accurate for tiny angles where acos degenerates.
        """
        d = self.multiply(other.conjugate())
        v = math.sqrt(d.x * d.x + d.y * d.y + d.z * d.z)
        return 2.0 * math.atan2(v, abs(d.w))

    def __repr__(self):
        return f"Quaternion({self.w:.6g}, {self.x:.6g}, {self.y:.6g}, {self.z:.6g})"


def _vec_sign_flip(x: float, y: float, z: float) -> bool:
    # tie-break for w == 0: make the first nonzero vector component positive
    for c in (x, y, z):
        if c != 0.0:
            return c < 0.0
    return False


def slerp(a: Quaternion, b: Quaternion, s: float) -> Quaternion:
    """Shortest-arc spherical interpolation from a (s=0) to b (s=1)."""
    dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z
    bw, bx, by, bz = b.w, b.x, b.y, b.z
    if dot < 0.0:
        dot, bw, bx, by, bz = -dot, -bw, -bx, -by, -bz
    if dot > 1.0 - 1e-12:
        # nearly parallel: linear blend then renormalize
        return Quaternion(
            a.w + s * (bw - a.w), a.x + s * (bx - a.x),
            a.y + s * (by - a.y), a.z + s * (bz - a.z),
        )
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    ka = math.sin((1.0 - s) * theta) / sin_theta
    kb = math.sin(s * theta) / sin_theta
    return Quaternion(
        ka * a.w + kb * bw, ka * a.x + kb * bx,
        ka * a.y + kb * by, ka * a.z + kb * bz,
    )


@dataclass
class Pose:
    """Rigid transform: rotation then translation."""

    translation: np.ndarray
    rotation: Quaternion

    def __init__(self, translation=(0.0, 0.0, 0.0), rotation: Quaternion | None = None):
        self.translation = np.array(translation, dtype=float).reshape(3)
        self.rotation = rotation if rotation is not None else Quaternion.identity()

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(T[:3, 3], Quaternion.from_matrix(T[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.to_matrix()
        T[:3, 3] = self.translation
        return T

    def apply(self, point) -> np.ndarray:
        return self.rotation.rotate(point) + self.translation

    def to_dict(self) -> dict:
        return {"t": [float(v) for v in self.translation],
                "q": [self.rotation.w, self.rotation.x, self.rotation.y, self.rotation.z]}

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        q = d["q"]
        return Pose(d["t"], Quaternion(q[0], q[1], q[2], q[3]))

    def __repr__(self):
        t = self.translation
        return f"Pose(t=[{t[0]:.4g}, {t[1]:.4g}, {t[2]:.4g}], q={self.rotation!r})"


def compose(a: Pose, b: Pose) -> Pose:
    """Chain two transforms: (a o b) maps b-local points through b then a."""
    return Pose(a.rotation.rotate(b.translation) + a.translation,
                a.rotation.multiply(b.rotation))


def inverse(p: Pose) -> Pose:
    qi = p.rotation.conjugate()
    return Pose(-qi.rotate(p.translation), qi)


def pose_error(current: Pose, reference: Pose) -> np.ndarray:
    """6-vector task error [position; orientation] driving current to reference.

    Position part is the plain translation difference. Orientation part is
    2 * vec(q_ref * q_cur^-1) with the quaternion canonicalized onto the
    w >= 0 hemisphere, which matches the rotation vector to first order and
    always takes the shortest path.
    """
    e = np.empty(6)
    e[:3] = reference.translation - current.translation
    qc, qr = current.rotation, reference.rotation
    if (qc.w, qc.x, qc.y, qc.z) == (qr.w, qr.x, qr.y, qr.z):
        e[3:] = 0.0      # exactly zero for identical canonical quaternions
    else:
        q_err = qr.multiply(qc.conjugate())
        e[3:] = 2.0 * q_err.vector()
    return e


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Blend two poses: linear in translation, shortest-arc slerp in rotation."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter {s} outside [0, 1]")
    return Pose((1.0 - s) * a.translation + s * b.translation,
                slerp(a.rotation, b.rotation, s))


@dataclass
class Twist:
    """Spatial velocity: linear m/s, angular rad/s."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear = np.array(self.linear, dtype=float).reshape(3)
        self.angular = np.array(self.angular, dtype=float).reshape(3)
        if not (np.isfinite(self.linear).all() and np.isfinite(self.angular).all()):
            raise ValueError("twist components must be finite")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    @staticmethod
    def zero() -> "Twist":
        return Twist()

    @staticmethod
    def from_planar(v) -> "Twist":
        """Lift a planar (vx, vy, omega) base twist; z/roll/pitch pinned to 0."""
        return Twist([v[0], v[1], 0.0], [0.0, 0.0, v[2]])


@dataclass
class PlanarPose:
    """Base pose on the ground plane; theta wrapped into (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        self.theta = wrap_angle(float(self.theta))

    def lift(self) -> Pose:
        """SE(3) pose of the base: z = 0, pure yaw."""
        return Pose([self.x, self.y, 0.0],
                    Quaternion.from_axis_angle([0.0, 0.0, 1.0], self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def copy(self) -> "PlanarPose":
        return PlanarPose(self.x, self.y, self.theta)


def integrate_planar(p: PlanarPose, twist_xyt, dt: float) -> PlanarPose:
    """Integrate a body-frame planar twist over dt via the SE(2) exponential.

    Exact for arcs, so the 250 Hz open loop accumulates no discretization
    drift on pure translations or rotations.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    vx, vy, om = float(twist_xyt[0]), float(twist_xyt[1]), float(twist_xyt[2])
    a = om * dt
    dx_b, dy_b = vx * dt, vy * dt
    if abs(a) < 1e-8:
        # V(a) ~ I + a/2 * J with J the 90deg rotation
        ux = dx_b - 0.5 * a * dy_b
        uy = dy_b + 0.5 * a * dx_b
    else:
        s, c = math.sin(a), math.cos(a)
        v11 = s / a
        v12 = -(1.0 - c) / a
        ux = v11 * dx_b + v12 * dy_b
        uy = -v12 * dx_b + v11 * dy_b
    ct, st = math.cos(p.theta), math.sin(p.theta)
    return PlanarPose(p.x + ct * ux - st * uy,
                      p.y + st * ux + ct * uy,
                      p.theta + a)


def planar_of_pose(p: Pose) -> PlanarPose:
    """Project an SE(3) pose to the ground plane (x, y, yaw of its x-axis)."""
    R = p.rotation.to_matrix()
    return PlanarPose(float(p.translation[0]), float(p.translation[1]),
                      math.atan2(R[1, 0], R[0, 0]))
