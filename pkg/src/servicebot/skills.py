"""Taught skills: record end-effector trajectories against an object tag,
re-express them in the object frame, and replay them under new object poses.

Replay interpolates between samples in the object frame and only then
composes with the current object pose, so a displaced object yields exactly
the displaced trajectory (SE(3) equivariance holds per emitted reference).

Way-point motions are the other motion primitive: offsets from a reference
frame (a tag, the tracked human, an end-effector, or the base), each reached
by time interpolation from wherever the previous segment ended.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .spatial import Pose, Twist, compose, interpolate, inverse, pose_error

GRIPPER_MARKS = ("open", "close", "hold")

MAX_OBJECT_POSE_AGE_S = 1.0


class DemoError(Exception):
    pass


@dataclass
class DemoSample:
    t: float
    pose: Pose
    gripper: str = "hold"


@dataclass
class Demonstration:
    """Recorded trajectory in the robot base frame at record time."""

    task: str
    side: str
    tag_id: int
    rate_hz: float
    object_pose: Pose           # target object in the base frame, first sighting
    samples: list[DemoSample]

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise DemoError("recording rate must be positive")
        if len(self.samples) < 2:
            raise DemoError("a demonstration needs at least 2 samples")
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DemoError("sample times must be strictly increasing")
        for s in self.samples:
            if s.gripper not in GRIPPER_MARKS:
                raise DemoError(f"unknown gripper mark '{s.gripper}'")

    def duration(self) -> float:
        return self.samples[-1].t - self.samples[0].t


@dataclass
class ObjectCentricDemo:
    """Same trajectory with every sample expressed in the object tag frame."""

    task: str
    side: str
    tag_id: int
    rate_hz: float
    recorded_object_pose: Pose
    samples: list[DemoSample]


def record_demo(samples, tag_sightings, task: str, side: str, tag_id: int,
                rate_hz: float = 50.0) -> Demonstration:
    """Build a demonstration from streamed (t, pose, gripper) triples.

    tag_sightings are (t, tag_id, pose-in-base-frame) observations; the
    first sighting of the target tag becomes the reference object pose.
    Recording without a single sighting is rejected.
    """
    valid = sorted((s for s in tag_sightings if int(s[1]) == int(tag_id)),
                   key=lambda s: s[0])
    if not valid:
        raise DemoError("target tag was never observed during recording")
    demo_samples = [DemoSample(float(t), pose, gripper)
                    for t, pose, gripper in samples]
    return Demonstration(task, side, int(tag_id), rate_hz, valid[0][2],
                         demo_samples)


class DemoRecorder:
    """Accumulates a live teleoperation session into a Demonstration."""

    def __init__(self, task: str, side: str, tag_id: int, rate_hz: float = 50.0):
        self.task, self.side, self.tag_id = task, side, int(tag_id)
        self.rate_hz = rate_hz
        self.period = 1.0 / rate_hz
        self._samples: list[DemoSample] = []
        self._object_pose: Pose | None = None
        self._last_t = -math.inf

    def add_sample(self, t: float, pose: Pose, gripper: str = "hold") -> bool:
        """Record at most one sample per recording period; returns taken."""
        if t - self._last_t < self.period - 1e-9:
            return False
        self._samples.append(DemoSample(t, pose, gripper))
        self._last_t = t
        return True

    def mark_gripper(self, command: str) -> None:
        if self._samples:
            self._samples[-1].gripper = command

    def add_tag(self, t: float, tag_id: int, pose_in_base: Pose) -> None:
        if tag_id == self.tag_id and self._object_pose is None:
            self._object_pose = pose_in_base

    def finish(self) -> Demonstration:
        if self._object_pose is None:
            raise DemoError("target tag was never observed during recording")
        return Demonstration(self.task, self.side, self.tag_id, self.rate_hz,
                             self._object_pose, self._samples)


def to_object_frame(demo: Demonstration) -> ObjectCentricDemo:
    inv_obj = inverse(demo.object_pose)
    samples = [DemoSample(s.t, compose(inv_obj, s.pose), s.gripper)
               for s in demo.samples]
    return ObjectCentricDemo(demo.task, demo.side, demo.tag_id, demo.rate_hz,
                             demo.object_pose, samples)


def from_object_frame(ocd: ObjectCentricDemo, object_pose: Pose) -> Demonstration:
    samples = [DemoSample(s.t, compose(object_pose, s.pose), s.gripper)
               for s in ocd.samples]
    return Demonstration(ocd.task, ocd.side, ocd.tag_id, ocd.rate_hz,
                         object_pose, samples)


# -- serialization (JSON lines: header, then one sample per line) ------------

def save_demo(demo: Demonstration) -> str:
    header = {"task": demo.task, "side": demo.side, "tag_id": demo.tag_id,
              "rate_hz": demo.rate_hz, "object_pose": demo.object_pose.to_dict()}
    lines = [json.dumps(header)]
    lines += [json.dumps({"t": s.t, "pose": s.pose.to_dict(), "gripper": s.gripper})
              for s in demo.samples]
    return "\n".join(lines) + "\n"


def load_demo(text: str) -> Demonstration:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DemoError("empty demo file")
    try:
        header = json.loads(lines[0])
        samples = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as e:
        raise DemoError(f"invalid demo file: {e}") from e
    return Demonstration(
        header["task"], header["side"], int(header["tag_id"]),
        float(header["rate_hz"]), Pose.from_dict(header["object_pose"]),
        [DemoSample(float(s["t"]), Pose.from_dict(s["pose"]), s.get("gripper", "hold"))
         for s in samples])


# -- replay -------------------------------------------------------------------

RUNNING, SUCCEEDED, FAILED = "running", "succeeded", "failed"


@dataclass
class TickCommand:
    """What a runner wants done this tick."""

    reference: Pose | None = None
    feedforward: Twist | None = None
    gripper: str | None = None


class PlaybackRun:
    """Stepwise replay of an object-centric demo, polled once per tick.

    References are the object-frame samples interpolated in time, composed
    with the object pose supplied at start. Aborts when the tracking error
    exceeds the threshold.
    """

    def __init__(self, demo: ObjectCentricDemo, object_pose: Pose,
                 speed: float = 1.0, abort_error_m: float = 0.1,
                 success_error_m: float = 0.05,
                 object_pose_age_s: float = 0.0):
        if speed <= 0.0:
            raise ValueError("speed scale must be positive")
        self.demo = demo
        self.object_pose = object_pose
        self.speed = speed
        self.abort_error_m = abort_error_m
        self.success_error_m = success_error_m
        self.status = RUNNING
        self.reason = ""
        self.side = demo.side
        self._t0: float | None = None
        self._fired: set[int] = set()
        self._last_ref: Pose | None = None
        if object_pose_age_s > MAX_OBJECT_POSE_AGE_S:
            self.status = FAILED
            self.reason = f"object pose stale by {object_pose_age_s:.2f}s"

    def _sample_pose(self, tau: float) -> Pose:
        samples = self.demo.samples
        if tau <= samples[0].t:
            local = samples[0].pose
        elif tau >= samples[-1].t:
            local = samples[-1].pose
        else:
            hi = next(i for i, s in enumerate(samples) if s.t > tau)
            lo = hi - 1
            u = (tau - samples[lo].t) / (samples[hi].t - samples[lo].t)
            local = interpolate(samples[lo].pose, samples[hi].pose, u)
        return compose(self.object_pose, local)

    def tick(self, now: float, current_ee: Pose, dt: float) -> TickCommand:
        if self.status != RUNNING:
            return TickCommand()
        if self._t0 is None:
            self._t0 = now
        tau = self.demo.samples[0].t + (now - self._t0) * self.speed
        ref = self._sample_pose(tau)

        err = float(np.linalg.norm(current_ee.translation - ref.translation))
        if err > self.abort_error_m:
            self.status = FAILED
            self.reason = f"tracking error {err:.3f} m"
            return TickCommand()

        gripper = None
        for i, s in enumerate(self.demo.samples):
            if s.t <= tau and i not in self._fired:
                self._fired.add(i)
                if s.gripper != "hold":
                    gripper = s.gripper
        ff = Twist(*np.split(pose_error(ref, self._sample_pose(tau + dt * self.speed)) / dt, 2))
        self._last_ref = ref

        if tau >= self.demo.samples[-1].t:
            if err <= self.success_error_m:
                self.status = SUCCEEDED
            else:
                # keep holding the last reference until settled or aborted
                if tau > self.demo.samples[-1].t + 2.0 * self.speed:
                    self.status = FAILED
                    self.reason = f"did not settle (error {err:.3f} m)"
        return TickCommand(reference=ref, feedforward=ff, gripper=gripper)


@dataclass
class Waypoint:
    offset: Pose
    duration: float

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("waypoint durations must be positive")


@dataclass
class WaypointSpec:
    frame: str                      # resolver key: tag:<id>, human, ee_*, base_link
    side: str
    waypoints: list[Waypoint]
    gripper_actions: dict[int, str] = field(default_factory=dict)


class WaypointRun:
    """Streams interpolated references through a sequence of way-points."""

    def __init__(self, spec: WaypointSpec, frame_pose: Pose, start_ee: Pose,
                 success_error_m: float = 0.04):
        self.spec = spec
        self.side = spec.side
        self.targets = [compose(frame_pose, wp.offset) for wp in spec.waypoints]
        self.durations = [wp.duration for wp in spec.waypoints]
        self.success_error_m = success_error_m
        self.status = RUNNING
        self.reason = ""
        self._segment = 0
        self._seg_start_pose = start_ee
        self._seg_start_t: float | None = None
        self._settle_until: float | None = None

    def tick(self, now: float, current_ee: Pose, dt: float) -> TickCommand:
        if self.status != RUNNING:
            return TickCommand()
        if self._seg_start_t is None:
            self._seg_start_t = now
        k = self._segment
        duration = self.durations[k]
        s = min(1.0, (now - self._seg_start_t) / duration)
        ref = interpolate(self._seg_start_pose, self.targets[k], s)
        s2 = min(1.0, (now + dt - self._seg_start_t) / duration)
        ref2 = interpolate(self._seg_start_pose, self.targets[k], s2)
        ff = Twist(*np.split(pose_error(ref, ref2) / dt, 2))

        gripper = None
        if s >= 1.0:
            err = float(np.linalg.norm(current_ee.translation
                                       - self.targets[k].translation))
            if err <= self.success_error_m:
                if k in self.spec.gripper_actions:
                    gripper = self.spec.gripper_actions[k]
                self._advance(now, self.targets[k])
            elif self._settle_until is None:
                self._settle_until = now + 2.0
            elif now > self._settle_until:
                self.status = FAILED
                self.reason = f"waypoint {k} not reached (error {err:.3f} m)"
        return TickCommand(reference=ref, feedforward=ff, gripper=gripper)

    def _advance(self, now: float, reached: Pose) -> None:
        self._settle_until = None
        self._segment += 1
        if self._segment >= len(self.targets):
            self.status = SUCCEEDED
        else:
            self._seg_start_pose = reached
            self._seg_start_t = now


# -- motion library -----------------------------------------------------------

class LibraryError(Exception):
    pass


@dataclass
class MotionEntry:
    label: str
    kind: str                       # waypoints | demo | posture
    side: str = "left"
    spec: WaypointSpec | None = None
    demo: ObjectCentricDemo | None = None


class MotionLibrary:
    """Labelled motions: way-point specs, demos, and the home posture."""

    def __init__(self, entries: dict[str, MotionEntry]):
        self.entries = entries

    def __contains__(self, label: str) -> bool:
        return label in self.entries

    def get(self, label: str) -> MotionEntry:
        if label not in self.entries:
            raise LibraryError(f"no motion labelled '{label}'")
        return self.entries[label]


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise LibraryError(f"duplicate label '{key}' in motion library")
        seen[key] = value
    return seen


def load_library(text: str, read_file) -> MotionLibrary:
    """Parse the library document; demo files load eagerly via read_file."""
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise LibraryError(f"invalid library document: {e}") from e
    entries = {}
    for label, item in doc.items():
        kind = item.get("kind")
        side = item.get("side", "left")
        if kind == "waypoints":
            wps = [Waypoint(Pose.from_dict(w["offset"]), float(w["duration_s"]))
                   for w in item["waypoints"]]
            actions = {int(k): v for k, v in item.get("gripper", {}).items()}
            entries[label] = MotionEntry(label, kind, side,
                                         spec=WaypointSpec(item["frame"], side,
                                                           wps, actions))
        elif kind == "demo":
            try:
                demo = load_demo(read_file(item["file"]))
            except (OSError, DemoError) as e:
                raise LibraryError(f"demo for '{label}' failed to load: {e}") from e
            entries[label] = MotionEntry(label, kind, side,
                                         demo=to_object_frame(demo))
        elif kind == "posture":
            entries[label] = MotionEntry(label, kind, side)
        else:
            raise LibraryError(f"'{label}': unknown motion kind '{kind}'")
    return MotionLibrary(entries)
