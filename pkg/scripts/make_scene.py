#!/usr/bin/env python3
"""Regenerate the bundled kitchen scene, motion library and demo file.

Verifies the authored geometry as it goes: approach offsets reproduce the
intended base targets, tags and the human are visible from the poses where
the executive needs them, and every manipulation target stays inside the
arm's comfortable reach envelope.
"""

import json
import math
import pathlib

import numpy as np

from servicebot.model import Configuration, load_model
from servicebot.spatial import (PlanarPose, Pose, Quaternion, compose, inverse,
                                planar_of_pose)

DATA = pathlib.Path(__file__).resolve().parents[1] / "src/servicebot/data"

ROT_Y = lambda a: Quaternion.from_axis_angle([0, 1, 0], a)
ROT_X = lambda a: Quaternion.from_axis_angle([1, 0, 0], a)
ROT_Z = lambda a: Quaternion.from_axis_angle([0, 0, 1], a)


def approach_offset(tag: Pose, target: PlanarPose) -> Pose:
    """Offset o with planar(tag o) == target."""
    goal = target.lift()
    off = compose(inverse(tag), goal)
    back = planar_of_pose(compose(tag, off))
    assert abs(back.x - target.x) < 1e-9 and abs(back.y - target.y) < 1e-9
    assert abs(back.theta - target.theta) < 1e-9
    return off


def tag_frame_offset(tag: Pose, world_point, world_q: Quaternion) -> Pose:
    """Offset o with (tag o) == the given world pose."""
    goal = Pose(world_point, world_q)
    off = compose(inverse(tag), goal)
    again = compose(tag, off)
    assert np.allclose(again.translation, goal.translation, atol=1e-12)
    return off


def main():
    model = load_model((DATA / "model.json").read_text())
    ctrl = json.loads((DATA / "controller.json").read_text())
    home = np.zeros(model.n)
    for name, value in ctrl["home"].items():
        home[model.joint_index[name]] = value

    # -- world layout -------------------------------------------------------
    table_tag = Pose([1.90, 0.0, 0.80], ROT_Y(-math.pi / 2))       # faces -x
    mug = Pose([2.05, -0.10, 0.78])                                # on the tabletop
    cabinet_tag = Pose([1.00, 2.45, 1.00], ROT_X(math.pi / 2))     # faces -y
    dishwasher_tag = Pose([-1.28, 0.60, 0.85], ROT_Y(math.pi / 2))  # faces +x
    plate = Pose([-1.35, 0.60, 0.65])

    table_approach = PlanarPose(1.55, -0.35, 0.0)
    cabinet_approach = PlanarPose(1.25, 1.85, math.pi / 2)
    dishwasher_approach = PlanarPose(-0.88, 0.85, math.pi)

    human_pos = np.array([3.2, -1.0])
    human_yaw = math.atan2(table_approach.y - human_pos[1],
                           table_approach.x - human_pos[0])

    scene = {
        "objects": [
            {"label": "mug", "tag_id": 1, "pose": mug.to_dict(), "graspable_radius_m": 0.06},
            {"label": "plate", "tag_id": 2, "pose": plate.to_dict(), "graspable_radius_m": 0.07},
        ],
        "locations": {
            "table": {"tag_id": 10, "pose": table_tag.to_dict(),
                      "approach_offset": approach_offset(table_tag, table_approach).to_dict()},
            "cabinet": {"tag_id": 12, "pose": cabinet_tag.to_dict(),
                        "approach_offset": approach_offset(cabinet_tag, cabinet_approach).to_dict()},
            "dishwasher": {"tag_id": 11, "pose": dishwasher_tag.to_dict(),
                           "approach_offset": approach_offset(dishwasher_tag, dishwasher_approach).to_dict()},
        },
        "humans": [{"id": "h1", "position": [float(human_pos[0]), float(human_pos[1])],
                    "head_yaw": round(human_yaw, 6), "height_m": 1.6}],
        "obstacles": [],
        "noise": {"sigma_pos_m": 0.002, "sigma_rot_deg": 0.5},
        "attention_threshold_deg": 30.0,
        "seed": 7,
    }

    # -- geometric sanity at the poses the executive will reach -------------
    from servicebot.sim import Scene, World, load_scene
    world = World(model, load_scene(json.dumps(scene)))
    world.scene.sigma_pos = world.scene.sigma_rot = 0.0

    def at(base, q=home):
        world.config = Configuration(base.copy(), q.copy())

    def shoulder(side="l"):
        return model.forward_kinematics(world.config, f"{side}_shoulder_pitch").translation

    at(table_approach)
    seen = {o.tag_id for o in world.observe_tags("torso_cam")}
    assert 1 in seen, f"mug tag not visible from table approach (saw {seen})"
    sel = world.select_handover_target()
    assert sel is not None and sel[0] == "h1", "human not selectable from table approach"
    reach = np.linalg.norm(mug.translation - shoulder())
    assert reach < 0.60, f"mug reach {reach:.3f}"

    at(cabinet_approach)
    seen = {o.tag_id for o in world.observe_tags("torso_cam")}
    assert 12 in seen, f"cabinet tag not visible from its approach (saw {seen})"
    place_point = np.array([1.0, 2.30, 0.90])
    reach = np.linalg.norm(place_point - shoulder())
    assert reach < 0.60, f"cabinet place reach {reach:.3f}"

    at(dishwasher_approach)
    seen = {o.tag_id for o in world.observe_tags("torso_cam")}
    assert 11 in seen, f"dishwasher tag not visible from its approach (saw {seen})"
    reach = np.linalg.norm(plate.translation - shoulder())
    assert reach < 0.62, f"plate reach {reach:.3f}"

    (DATA / "scene.json").write_text(json.dumps(scene, indent=2) + "\n")

    # -- motion library ------------------------------------------------------
    place_off = tag_frame_offset(cabinet_tag, place_point, ROT_Z(math.pi / 2))
    preplace_off = tag_frame_offset(cabinet_tag, [1.0, 2.10, 1.02], ROT_Z(math.pi / 2))
    library = {
        "pick_table_mug": {"kind": "waypoints", "side": "left", "frame": "tag:1",
                           "waypoints": [
                               {"offset": Pose([-0.15, 0.0, 0.12]).to_dict(), "duration_s": 2.5},
                               {"offset": Pose([-0.02, 0.0, 0.02]).to_dict(), "duration_s": 2.0}]},
        "retract_table": {"kind": "waypoints", "side": "left", "frame": "ee_left",
                          "waypoints": [
                              {"offset": Pose([-0.10, 0.0, 0.15]).to_dict(), "duration_s": 1.5}]},
        "place_cabinet": {"kind": "waypoints", "side": "left", "frame": "tag:12",
                          "waypoints": [
                              {"offset": preplace_off.to_dict(), "duration_s": 3.0},
                              {"offset": place_off.to_dict(), "duration_s": 2.0}]},
        "retract_cabinet": {"kind": "waypoints", "side": "left", "frame": "ee_left",
                            "waypoints": [
                                {"offset": Pose([-0.12, 0.0, 0.12]).to_dict(), "duration_s": 1.5}]},
        "pick_dishwasher_plate": {"kind": "demo", "side": "left",
                                  "file": "demo_pick_dishwasher_plate.jsonl"},
        "retract_dishwasher": {"kind": "waypoints", "side": "left", "frame": "ee_left",
                               "waypoints": [
                                   {"offset": Pose([-0.12, 0.0, 0.12]).to_dict(), "duration_s": 1.5}]},
        "handover_extend": {"kind": "waypoints", "side": "left", "frame": "human",
                            "waypoints": [
                                {"offset": Pose([0.28, 0.0, 0.95], ROT_Z(math.pi)).to_dict(),
                                 "duration_s": 3.0}]},
        "retract_handover": {"kind": "waypoints", "side": "left", "frame": "ee_left",
                             "waypoints": [
                                 {"offset": Pose([-0.15, 0.0, 0.10]).to_dict(), "duration_s": 1.5}]},
        "home": {"kind": "posture"},
    }
    (DATA / "library.json").write_text(json.dumps(library, indent=2) + "\n")

    # -- bundled demonstration (recorded-at dishwasher pick) ------------------
    # authored directly in the base frame of the recording pose
    base = dishwasher_approach.lift()
    to_base = inverse(base)
    plate_in_base = compose(to_base, plate)
    rate = 50.0
    keyframes = [   # (t, world point, gripper)
        (0.0, [-1.05, 0.70, 0.95], "hold"),
        (2.5, [-1.20, 0.60, 0.80], "hold"),
        (5.0, [-1.33, 0.60, 0.67], "close"),
        (7.0, [-1.20, 0.60, 0.85], "hold"),
    ]
    samples = []
    for i in range(len(keyframes) - 1):
        (t0, p0, _), (t1, p1, g1) = keyframes[i], keyframes[i + 1]
        steps = int(round((t1 - t0) * rate))
        for k in range(steps):
            s = (k + 1) / steps
            t = t0 + (t1 - t0) * s
            point = (1 - s) * np.array(p0) + s * np.array(p1)
            ee_world = Pose(point)          # top grasp, tool down
            ee_base = compose(to_base, ee_world)
            gripper = g1 if k == steps - 1 else "hold"
            samples.append({"t": round(t, 6), "pose": ee_base.to_dict(), "gripper": gripper})
    header = {"task": "pick_dishwasher_plate", "side": "left", "tag_id": 2,
              "rate_hz": rate, "object_pose": plate_in_base.to_dict()}
    lines = [json.dumps(header)] + [json.dumps(s) for s in samples]
    (DATA / "demo_pick_dishwasher_plate.jsonl").write_text("\n".join(lines) + "\n")

    print("scene, library and demo written; geometry checks passed")


if __name__ == "__main__":
    main()
