"""Deterministic kinematic world.

Ground truth mirrors the controller's integration (perfect actuation by
default, optional first-order velocity lag), so open-loop control can be
tested without tracking noise. Sensing is geometric: fiducial tags are
observed in camera frames whenever they fall inside a camera's field-of-view
cone and range band, with seeded Gaussian noise; humans are points with a
head yaw that defines where they look. No physics: released objects stay
where they were let go.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Configuration, KinematicModel
from .spatial import (PlanarPose, Pose, Quaternion, Twist, compose,
                      integrate_planar, inverse)

LOCATION_LABELS = ("table", "dishwasher", "cabinet")

GRIPPER_FRAMES = {"left": "ee_left", "right": "ee_right"}


class SceneError(Exception):
    pass


@dataclass
class SceneObject:
    label: str
    tag_id: int
    pose: Pose
    graspable_radius: float = 0.06


@dataclass
class Location:
    label: str
    tag_id: int
    pose: Pose
    approach_offset: Pose


@dataclass
class HumanAgent:
    id: str
    position: np.ndarray        # ground-plane (x, y)
    head_yaw: float             # world frame
    height: float = 1.6         # head height used for camera visibility

    def __post_init__(self):
        self.position = np.array(self.position, dtype=float).reshape(2)
        if not (np.isfinite(self.position).all()
                and math.isfinite(self.head_yaw) and math.isfinite(self.height)):
            raise SceneError(f"human '{self.id}' has non-finite fields")

    def head_point(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.height])

    def frame(self) -> Pose:
        """Planar pose whose x-axis is the facing direction."""
        return PlanarPose(self.position[0], self.position[1], self.head_yaw).lift()


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.array(self.center, dtype=float).reshape(2)


@dataclass
class Scene:
    objects: list[SceneObject]
    locations: dict[str, Location]
    humans: list[HumanAgent] = field(default_factory=list)
    obstacles: list[Obstacle] = field(default_factory=list)
    sigma_pos: float = 0.0
    sigma_rot: float = 0.0          # radians, on the rotation vector
    attention_threshold: float = math.radians(30.0)
    seed: int = 0

    def __post_init__(self):
        tags = [o.tag_id for o in self.objects] + [l.tag_id for l in self.locations.values()]
        if len(tags) != len(set(tags)):
            raise SceneError("tag ids must be unique across objects and locations")
        if set(self.locations) != set(LOCATION_LABELS):
            raise SceneError(f"locations must be exactly {LOCATION_LABELS}")

    def object_by_label(self, label: str) -> SceneObject:
        for o in self.objects:
            if o.label == label:
                return o
        raise KeyError(f"no object '{label}' in scene")

    def tag_pose(self, tag_id: int) -> Pose:
        for o in self.objects:
            if o.tag_id == tag_id:
                return o.pose
        for loc in self.locations.values():
            if loc.tag_id == tag_id:
                return loc.pose
        raise KeyError(f"no tag {tag_id} in scene")


def load_scene(text: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"invalid JSON: {e}") from e
    objects = [SceneObject(o["label"], int(o["tag_id"]), Pose.from_dict(o["pose"]),
                           float(o.get("graspable_radius_m", 0.06)))
               for o in doc.get("objects", [])]
    locations = {}
    for label, ld in doc.get("locations", {}).items():
        locations[label] = Location(label, int(ld["tag_id"]), Pose.from_dict(ld["pose"]),
                                    Pose.from_dict(ld["approach_offset"]))
    humans = [HumanAgent(h["id"], h["position"], float(h["head_yaw"]),
                         float(h.get("height_m", 1.6)))
              for h in doc.get("humans", [])]
    obstacles = [Obstacle(o["center"], float(o["radius_m"]))
                 for o in doc.get("obstacles", [])]
    noise = doc.get("noise", {})
    return Scene(objects, locations, humans, obstacles,
                 sigma_pos=float(noise.get("sigma_pos_m", 0.0)),
                 sigma_rot=math.radians(float(noise.get("sigma_rot_deg", 0.0))),
                 attention_threshold=math.radians(float(doc.get("attention_threshold_deg", 30.0))),
                 seed=int(doc.get("seed", 0)))


@dataclass
class TagObservation:
    tag_id: int
    pose: Pose              # marker pose in the camera frame
    camera: str
    t: float
    sigma: tuple[float, float] = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {"tag_id": self.tag_id, "pose": self.pose.to_dict(),
                "camera": self.camera, "t": self.t,
                "sigma": [self.sigma[0], self.sigma[1]]}


@dataclass
class Attachment:
    side: str
    object_label: str
    grasp: Pose             # gripper frame -> object


class World:
    """Ground-truth state: robot configuration, attachments, clock, RNG."""

    def __init__(self, model: KinematicModel, scene: Scene,
                 config: Configuration | None = None,
                 actuation_lag: float = 0.0):
        self.model = model
        self.scene = scene
        self.config = config.copy() if config else Configuration(
            PlanarPose(), model.clamp_positions(np.zeros(model.n)))
        self.attachments: dict[str, Attachment] = {}
        self.gripper_open = {"left": True, "right": True}
        self.time = 0.0
        self.actuation_lag = actuation_lag
        self.rng = np.random.default_rng(scene.seed)
        self._qdot_actual = np.zeros(model.n)
        self._nu_actual = np.zeros(3)
        # corridor geometry for the obstacle predicate
        self.base_half_width = 0.25
        self.corridor_margin = 0.15
        self.lookahead_s = 1.5
        self.min_lookahead = 0.3

    # -- time update --------------------------------------------------------

    def step(self, qdot: np.ndarray, nu_planar, dt: float) -> None:
        """Advance ground truth by one control period.

        With zero actuation lag this is the controller's own integration
        applied to the same commands, so open loop equals ground truth.
        """
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        qdot = np.asarray(qdot, dtype=float)
        nu = np.asarray(nu_planar, dtype=float)
        if self.actuation_lag > 0.0:
            k = min(1.0, dt / self.actuation_lag)
            self._qdot_actual += k * (qdot - self._qdot_actual)
            self._nu_actual += k * (nu - self._nu_actual)
            qdot, nu = self._qdot_actual, self._nu_actual
        self.config.q = self.model.clamp_positions(self.config.q + qdot * dt)
        self.config.base = integrate_planar(self.config.base, nu, dt)
        self.time += dt
        self._settle_attachments()

    def _settle_attachments(self) -> None:
        for side, att in self.attachments.items():
            gripper = self.model.forward_kinematics(self.config, GRIPPER_FRAMES[side])
            self.scene.object_by_label(att.object_label).pose = compose(gripper, att.grasp)

    # -- sensing ------------------------------------------------------------

    def _visible(self, cam, cam_pose: Pose, point: np.ndarray) -> bool:
        rel = inverse(cam_pose).apply(point)
        dist = float(np.linalg.norm(rel))
        if not (cam.min_range <= dist <= cam.max_range):
            return False
        if rel[2] <= 0.0:
            return False
        angle = math.acos(min(1.0, rel[2] / dist))
        return angle <= math.radians(cam.fov_deg) / 2.0

    def observe_tags(self, camera: str) -> list[TagObservation]:
        """Tags currently inside the camera cone, as camera-frame poses."""
        if camera not in self.model.camera_by_name:
            raise KeyError(f"unknown camera '{camera}'")
        cam = self.model.camera_by_name[camera]
        cam_pose = self.model.forward_kinematics(self.config, cam.frame)
        cam_inv = inverse(cam_pose)
        out = []
        tagged = [(o.tag_id, o.pose) for o in self.scene.objects]
        tagged += [(l.tag_id, l.pose) for l in self.scene.locations.values()]
        for tag_id, pose in sorted(tagged, key=lambda tp: tp[0]):
            if not self._visible(cam, cam_pose, pose.translation):
                continue
            rel = compose(cam_inv, pose)
            if self.scene.sigma_pos > 0.0 or self.scene.sigma_rot > 0.0:
                dt_ = self.rng.normal(0.0, self.scene.sigma_pos, 3)
                dr = self.rng.normal(0.0, self.scene.sigma_rot, 3)
                rel = Pose(rel.translation + dt_,
                           Quaternion.from_rotvec(dr).multiply(rel.rotation))
            out.append(TagObservation(tag_id, rel, camera, self.time,
                                      (self.scene.sigma_pos, self.scene.sigma_rot)))
        return out

    # -- humans -------------------------------------------------------------

    def attentive(self, human: HumanAgent) -> bool:
        to_robot = np.array([self.config.base.x, self.config.base.y]) - human.position
        norm = float(np.linalg.norm(to_robot))
        if norm < 1e-9:
            return True
        facing = np.array([math.cos(human.head_yaw), math.sin(human.head_yaw)])
        cos_angle = float(facing @ to_robot) / norm
        return math.acos(max(-1.0, min(1.0, cos_angle))) <= self.scene.attention_threshold

    def select_handover_target(self, camera: str = "torso_cam"):
        """Closest attentive human visible to the camera, with their frame."""
        cam = self.model.camera_by_name[camera]
        cam_pose = self.model.forward_kinematics(self.config, cam.frame)
        base_xy = np.array([self.config.base.x, self.config.base.y])
        best = None
        best_dist = math.inf
        for human in self.scene.humans:
            if not self.attentive(human):
                continue
            if not self._visible(cam, cam_pose, human.head_point()):
                continue
            dist = float(np.linalg.norm(human.position - base_xy))
            if dist < best_dist:
                best, best_dist = human, dist
        if best is None:
            return None
        return best.id, best.frame()

    # -- obstacles ----------------------------------------------------------

    def obstacle_ahead(self, twist_xyt) -> bool:
        """True when a disc blocks the stopping corridor of the commanded
        direction (body-frame planar twist)."""
        vx, vy = float(twist_xyt[0]), float(twist_xyt[1])
        speed = math.hypot(vx, vy)
        if speed < 1e-6:
            return False
        th = self.config.base.theta
        ct, st = math.cos(th), math.sin(th)
        direction = np.array([ct * vx - st * vy, st * vx + ct * vy]) / speed
        length = max(self.min_lookahead, speed * self.lookahead_s)
        half_width = self.base_half_width + self.corridor_margin
        origin = np.array([self.config.base.x, self.config.base.y])
        for obs in self.scene.obstacles:
            rel = obs.center - origin
            along = float(rel @ direction)
            if along < -obs.radius or along > length + obs.radius:
                continue
            perp = abs(float(rel[0] * direction[1] - rel[1] * direction[0]))
            if perp <= half_width + obs.radius:
                return True
        return False

    # -- grippers -----------------------------------------------------------

    def set_gripper(self, side: str, command: str) -> None:
        """close: attach the nearest graspable object; open: release in place."""
        if side not in GRIPPER_FRAMES:
            raise KeyError(f"unknown gripper side '{side}'")
        if command == "open":
            self.gripper_open[side] = True
            self.attachments.pop(side, None)     # object pose stays put
            return
        if command != "close":
            raise ValueError(f"unknown gripper command '{command}'")
        self.gripper_open[side] = False
        if side in self.attachments:
            return
        gripper = self.model.forward_kinematics(self.config, GRIPPER_FRAMES[side])
        held = {a.object_label for a in self.attachments.values()}
        best, best_dist = None, math.inf
        for obj in self.scene.objects:
            if obj.label in held:
                continue
            dist = float(np.linalg.norm(obj.pose.translation - gripper.translation))
            if dist <= obj.graspable_radius and dist < best_dist:
                best, best_dist = obj, dist
        if best is not None:
            self.attachments[side] = Attachment(side, best.label,
                                                compose(inverse(gripper), best.pose))


def step_world(world: World, solution, dt: float) -> World:
    """Drive the world with a controller solution (see World.step)."""
    nu = (solution.nu.linear[0], solution.nu.linear[1], solution.nu.angular[2])
    world.step(solution.qdot, nu, dt)
    return world


def observe_tags(world: World, camera: str) -> list[TagObservation]:
    return world.observe_tags(camera)


def select_handover_target(world: World):
    return world.select_handover_target()


def obstacle_ahead(world: World, twist_xyt) -> bool:
    return world.obstacle_ahead(twist_xyt)


def set_gripper(world: World, side: str, command: str) -> World:
    world.set_gripper(side, command)
    return world
