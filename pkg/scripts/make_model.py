#!/usr/bin/env python3
"""Regenerate the bundled default robot model (src/servicebot/data/model.json).

Layout: planar omnidirectional base, prismatic torso, two mirrored 7-DOF
arms, pan/tilt head, one prismatic finger joint per gripper. 19 actuated
joints; postural subset = torso + both arms (15).
"""

import json
import math
import pathlib

from servicebot.spatial import Pose, Quaternion


def pose(t=(0.0, 0.0, 0.0), q=None):
    return Pose(t, q).to_dict()


def rot_y(angle):
    return Quaternion.from_axis_angle([0, 1, 0], angle)


def rot_x(angle):
    return Quaternion.from_axis_angle([1, 0, 0], angle)


def arm(prefix, side_y):
    """Seven revolute joints; links extend along local -z."""
    shoulder = (0.0, side_y, 0.25)
    return [
        {"name": f"{prefix}_shoulder_pitch", "kind": "revolute", "parent": "torso_lift",
         "axis": [0, 1, 0], "origin": pose(shoulder),
         "limits": {"lo": -2.7, "hi": 2.7, "vel": 1.8}},
        {"name": f"{prefix}_shoulder_roll", "kind": "revolute", "parent": f"{prefix}_shoulder_pitch",
         "axis": [1, 0, 0], "origin": pose(),
         "limits": {"lo": -2.7, "hi": 2.7, "vel": 1.8}},
        {"name": f"{prefix}_upper_arm_roll", "kind": "revolute", "parent": f"{prefix}_shoulder_roll",
         "axis": [0, 0, 1], "origin": pose(),
         "limits": {"lo": -2.7, "hi": 2.7, "vel": 1.8}},
        {"name": f"{prefix}_elbow", "kind": "revolute", "parent": f"{prefix}_upper_arm_roll",
         "axis": [0, 1, 0], "origin": pose((0.0, 0.0, -0.30)),
         "limits": {"lo": -2.6, "hi": 2.6, "vel": 1.8}},
        {"name": f"{prefix}_forearm_roll", "kind": "revolute", "parent": f"{prefix}_elbow",
         "axis": [0, 0, 1], "origin": pose((0.0, 0.0, -0.25)),
         "limits": {"lo": -2.7, "hi": 2.7, "vel": 2.0}},
        {"name": f"{prefix}_wrist_pitch", "kind": "revolute", "parent": f"{prefix}_forearm_roll",
         "axis": [0, 1, 0], "origin": pose(),
         "limits": {"lo": -2.0, "hi": 2.0, "vel": 2.0}},
        {"name": f"{prefix}_wrist_roll", "kind": "revolute", "parent": f"{prefix}_wrist_pitch",
         "axis": [1, 0, 0], "origin": pose(),
         "limits": {"lo": -2.7, "hi": 2.7, "vel": 2.0}},
    ]


def main():
    joints = [
        {"name": "torso_lift", "kind": "prismatic", "parent": "base_link",
         "axis": [0, 0, 1], "origin": pose((0.0, 0.0, 0.60)),
         "limits": {"lo": 0.0, "hi": 0.35, "vel": 0.15}},
    ]
    joints += arm("l", +0.25)
    joints += arm("r", -0.25)
    joints += [
        {"name": "head_pan", "kind": "revolute", "parent": "torso_lift",
         "axis": [0, 0, 1], "origin": pose((0.0, 0.0, 0.50)),
         "limits": {"lo": -1.3, "hi": 1.3, "vel": 2.0}},
        {"name": "head_tilt", "kind": "revolute", "parent": "head_pan",
         "axis": [0, 1, 0], "origin": pose((0.05, 0.0, 0.05)),
         "limits": {"lo": -1.0, "hi": 1.0, "vel": 2.0}},
        {"name": "l_gripper", "kind": "prismatic", "parent": "l_wrist_roll",
         "axis": [0, 1, 0], "origin": pose((0.0, 0.0, -0.08)),
         "limits": {"lo": 0.0, "hi": 0.045, "vel": 0.1}},
        {"name": "r_gripper", "kind": "prismatic", "parent": "r_wrist_roll",
         "axis": [0, 1, 0], "origin": pose((0.0, 0.0, -0.08)),
         "limits": {"lo": 0.0, "hi": 0.045, "vel": 0.1}},
    ]

    frames = [
        {"name": "ee_left", "parent": "l_wrist_roll", "origin": pose((0.0, 0.0, -0.12))},
        {"name": "ee_right", "parent": "r_wrist_roll", "origin": pose((0.0, 0.0, -0.12))},
        # torso camera: optical axis (+z) forward and pitched 18 deg down
        {"name": "torso_cam", "parent": "torso_lift",
         "origin": pose((0.10, 0.0, 0.25), rot_y(math.pi / 2 + math.radians(8)))},
        # wrist camera: optical axis along the tool (-z of the wrist)
        {"name": "wrist_cam_left", "parent": "l_wrist_roll",
         "origin": pose((0.05, 0.0, -0.05), rot_x(math.pi))},
    ]

    postural = (["torso_lift"]
                + [f"{p}_{j}" for p in ("l", "r")
                   for j in ("shoulder_pitch", "shoulder_roll", "upper_arm_roll",
                             "elbow", "forearm_roll", "wrist_pitch", "wrist_roll")])

    collision = {
        "spheres": [
            {"name": "base", "frame": "base_link", "offset": pose((0.0, 0.0, 0.10)), "radius_m": 0.20},
            {"name": "torso", "frame": "torso_lift", "offset": pose((0.0, 0.0, 0.10)), "radius_m": 0.16},
            {"name": "l_forearm", "frame": "l_elbow", "offset": pose((0.0, 0.0, -0.125)), "radius_m": 0.06},
            {"name": "r_forearm", "frame": "r_elbow", "offset": pose((0.0, 0.0, -0.125)), "radius_m": 0.06},
            {"name": "l_hand", "frame": "l_wrist_roll", "offset": pose((0.0, 0.0, -0.10)), "radius_m": 0.05},
            {"name": "r_hand", "frame": "r_wrist_roll", "offset": pose((0.0, 0.0, -0.10)), "radius_m": 0.05},
        ],
        "pairs": [
            ["l_hand", "r_hand"], ["l_forearm", "r_forearm"],
            ["l_hand", "r_forearm"], ["r_hand", "l_forearm"],
            ["l_hand", "torso"], ["r_hand", "torso"],
            ["l_hand", "base"], ["r_hand", "base"],
        ],
    }

    cameras = [
        {"name": "torso_cam", "frame": "torso_cam", "fov_deg": 90.0,
         "min_range_m": 0.35, "max_range_m": 6.0},
        {"name": "wrist_cam_left", "frame": "wrist_cam_left", "fov_deg": 70.0,
         "min_range_m": 0.03, "max_range_m": 1.0},
    ]

    doc = {"joints": joints, "frames": frames, "postural": postural,
           "collision": collision, "cameras": cameras}
    out = pathlib.Path(__file__).resolve().parents[1] / "src/servicebot/data/model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
