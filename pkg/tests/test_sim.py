import json
import math

import numpy as np
import pytest

from servicebot.data import (default_controller_text, default_model_text,
                             default_scene_text)
from servicebot.model import Configuration, load_model
from servicebot.sim import (HumanAgent, Location, Scene, SceneError,
                            SceneObject, World, load_scene, observe_tags,
                            select_handover_target, set_gripper, step_world)
from servicebot.spatial import PlanarPose, Pose, Quaternion, compose, inverse
from servicebot.wbc import (ControllerConfig, control_step, home_configuration,
                            init_controller, set_task_reference)


@pytest.fixture(scope="module")
def model():
    return load_model(default_model_text())


@pytest.fixture(scope="module")
def params():
    return ControllerConfig.from_json(default_controller_text())


def make_scene(objects=(), humans=(), obstacles=(), sigma=(0.0, 0.0), seed=0,
               attention_deg=30.0):
    far = [100.0, 100.0, 1.0]
    locations = {
        name: Location(name, 90 + i, Pose([far[0] + i, far[1], 1.0]), Pose())
        for i, name in enumerate(("table", "dishwasher", "cabinet"))
    }
    return Scene(list(objects), locations, list(humans), list(obstacles),
                 sigma_pos=sigma[0], sigma_rot=sigma[1],
                 attention_threshold=math.radians(attention_deg), seed=seed)


def home_world(model, params, scene=None):
    cfg = Configuration(PlanarPose(), home_configuration(model, params))
    return World(model, scene or make_scene(), config=cfg)


class TestSceneLoading:
    def test_bundled_scene_loads(self):
        scene = load_scene(default_scene_text())
        assert set(scene.locations) == {"table", "dishwasher", "cabinet"}
        assert {o.label for o in scene.objects} == {"mug", "plate"}

    def test_duplicate_tags_rejected(self):
        with pytest.raises(SceneError, match="unique"):
            make_scene(objects=[SceneObject("a", 90, Pose()),
                                SceneObject("b", 91, Pose())])

    def test_wrong_locations_rejected(self):
        with pytest.raises(SceneError, match="locations"):
            Scene([], {"table": Location("table", 1, Pose(), Pose())})


class TestStepWorld:
    def test_zero_velocity_only_advances_time(self, model, params):
        world = home_world(model, params)
        q0 = world.config.q.copy()
        world.step(np.zeros(model.n), (0, 0, 0), 0.004)
        assert world.time == pytest.approx(0.004)
        assert np.array_equal(world.config.q, q0)

    def test_attached_object_rides_gripper(self, model, params):
        ee = None
        world = home_world(model, params)
        ee = model.forward_kinematics(world.config, "ee_left")
        mug = SceneObject("mug", 1, Pose(ee.translation + [0.0, 0.0, -0.01]))
        world.scene.objects.append(mug)
        world.set_gripper("left", "close")
        assert "left" in world.attachments
        before = mug.pose.translation.copy()
        qdot = np.zeros(model.n)
        qdot[model.joint_index["torso_lift"]] = 0.1   # 0.1 m/s up for 1 s
        for _ in range(250):
            world.step(qdot, (0, 0, 0), 0.004)
        moved = mug.pose.translation - before
        assert moved[2] == pytest.approx(0.1, abs=1e-9)

    def test_open_loop_equals_ground_truth(self, model, params):
        state = init_controller(
            model, Configuration(PlanarPose(), home_configuration(model, params)),
            params)
        world = home_world(model, params)
        set_task_reference(state, "left", Pose([0.6, 0.2, 0.9]))
        set_task_reference(state, "base", Pose([0.5, 0.3, 0.0]))
        for _ in range(1000):
            sol, _ = control_step(state, model)
            step_world(world, sol, state.dt)
        assert np.max(np.abs(world.config.q - state.config.q)) <= 1e-12
        assert abs(world.config.base.x - state.config.base.x) <= 1e-12
        assert abs(world.config.base.y - state.config.base.y) <= 1e-12
        assert abs(world.config.base.theta - state.config.base.theta) <= 1e-12


class TestObserveTags:
    def test_on_axis_exact_when_noiseless(self, model, params):
        world = home_world(model, params)
        cam_pose = model.forward_kinematics(world.config, "torso_cam")
        tag_world = compose(cam_pose, Pose([0, 0, 2.0]))  # on the optical axis
        world.scene.objects.append(SceneObject("x", 1, tag_world))
        obs = observe_tags(world, "torso_cam")
        mine = [o for o in obs if o.tag_id == 1]
        assert len(mine) == 1
        assert np.allclose(mine[0].pose.translation, [0, 0, 2.0], atol=1e-12)

    def test_tag_behind_camera_absent(self, model, params):
        world = home_world(model, params)
        cam_pose = model.forward_kinematics(world.config, "torso_cam")
        behind = compose(cam_pose, Pose([0, 0, -1.0]))
        world.scene.objects.append(SceneObject("x", 1, behind))
        assert all(o.tag_id != 1 for o in observe_tags(world, "torso_cam"))

    def test_round_trip_to_world(self, model, params):
        world = home_world(model, params, make_scene(
            objects=[SceneObject("m", 1, Pose([1.2, 0.1, 0.9],
                                              Quaternion.from_axis_angle([0, 1, 0], 0.7)))]))
        cam_pose = model.forward_kinematics(world.config, "torso_cam")
        [obs] = [o for o in observe_tags(world, "torso_cam") if o.tag_id == 1]
        recovered = compose(cam_pose, obs.pose)
        true = world.scene.objects[0].pose
        assert np.allclose(recovered.translation, true.translation, atol=1e-9)
        assert recovered.rotation.angle_to(true.rotation) <= 1e-9

    def test_visibility_predicate_sound(self, model, params):
        rng = np.random.default_rng(5)
        cam = model.camera_by_name["torso_cam"]
        world = home_world(model, params)
        for _ in range(200):
            world.scene.objects = [SceneObject("x", 1, Pose(rng.uniform(-3, 3, 3)))]
            cam_pose = model.forward_kinematics(world.config, cam.frame)
            for o in observe_tags(world, "torso_cam"):
                rel = o.pose.translation
                dist = np.linalg.norm(rel)
                assert cam.min_range <= dist <= cam.max_range
                assert rel[2] > 0
                assert math.acos(rel[2] / dist) <= math.radians(cam.fov_deg) / 2

    def test_seeded_streams_identical(self, model, params):
        def run():
            scene = load_scene(default_scene_text())
            world = World(model, scene,
                          Configuration(PlanarPose(1.55, -0.35, 0),
                                        home_configuration(model, params)))
            frames = []
            for _ in range(20):
                for o in observe_tags(world, "torso_cam"):
                    frames.append(json.dumps(o.to_dict()))
                world.step(np.zeros(model.n), (0, 0, 0.1), 0.004)
            return "\n".join(frames)
        assert run() == run()

    def test_unknown_camera(self, model, params):
        with pytest.raises(KeyError):
            observe_tags(home_world(model, params), "belly_cam")


class TestHandoverTarget:
    def test_single_facing_human_selected(self, model, params):
        human = HumanAgent("h", [2.0, 0.0], math.pi)   # 2 m ahead, facing back
        world = home_world(model, params, make_scene(humans=[human]))
        sel = select_handover_target(world)
        assert sel is not None and sel[0] == "h"

    def test_attentiveness_gates_before_distance(self, model, params):
        near_away = HumanAgent("near", [1.5, 0.0], 0.0)     # looking away
        far_facing = HumanAgent("far", [3.0, 0.3], math.pi - 0.1)
        world = home_world(model, params,
                           make_scene(humans=[near_away, far_facing]))
        sel = select_handover_target(world)
        assert sel is not None and sel[0] == "far"

    def test_closest_of_two_attentive(self, model, params):
        a = HumanAgent("a", [2.0, 0.2], math.pi)
        b = HumanAgent("b", [3.0, -0.2], math.pi)
        world = home_world(model, params, make_scene(humans=[a, b]))
        assert select_handover_target(world)[0] == "a"

    def test_matches_brute_force_on_random_scenes(self, model, params):
        rng = np.random.default_rng(11)
        cam = model.camera_by_name["torso_cam"]
        for _ in range(50):
            humans = [HumanAgent(f"h{i}", rng.uniform(-4, 4, 2),
                                 rng.uniform(-math.pi, math.pi))
                      for i in range(rng.integers(0, 6))]
            world = home_world(model, params, make_scene(humans=humans))
            cam_pose = model.forward_kinematics(world.config, cam.frame)

            def eligible(h):
                to_robot = -h.position
                norm = np.linalg.norm(to_robot)
                facing = np.array([math.cos(h.head_yaw), math.sin(h.head_yaw)])
                if norm > 1e-9 and math.acos(np.clip(facing @ to_robot / norm, -1, 1)) \
                        > world.scene.attention_threshold:
                    return False
                rel = inverse(cam_pose).apply(h.head_point())
                d = np.linalg.norm(rel)
                return (cam.min_range <= d <= cam.max_range and rel[2] > 0
                        and math.acos(min(1.0, rel[2] / d)) <= math.radians(cam.fov_deg) / 2)

            expected = [h for h in humans if eligible(h)]
            got = select_handover_target(world)
            if not expected:
                assert got is None
            else:
                best = min(expected, key=lambda h: np.linalg.norm(h.position))
                assert got is not None and got[0] == best.id

    def test_attention_monotonicity(self, model, params):
        rng = np.random.default_rng(13)
        humans = [HumanAgent(f"h{i}", rng.uniform(-3, 3, 2),
                             rng.uniform(-math.pi, math.pi)) for i in range(5)]
        selected = []
        for deg in (60.0, 30.0, 10.0, 2.0):
            world = home_world(model, params,
                               make_scene(humans=humans, attention_deg=deg))
            targets = {h.id for h in humans if world.attentive(h)}
            selected.append(targets)
        for wider, narrower in zip(selected, selected[1:]):
            assert narrower <= wider


class TestObstacles:
    def test_no_obstacles(self, model, params):
        assert not home_world(model, params).obstacle_ahead([0.3, 0, 0])

    def test_disc_dead_ahead(self, model, params):
        from servicebot.sim import Obstacle
        world = home_world(model, params,
                           make_scene(obstacles=[Obstacle([0.3, 0.0], 0.1)]))
        assert world.obstacle_ahead([0.3, 0.0, 0.0])

    def test_disc_behind(self, model, params):
        from servicebot.sim import Obstacle
        world = home_world(model, params,
                           make_scene(obstacles=[Obstacle([-0.5, 0.0], 0.1)]))
        assert not world.obstacle_ahead([0.3, 0.0, 0.0])

    def test_not_moving_means_clear(self, model, params):
        from servicebot.sim import Obstacle
        world = home_world(model, params,
                           make_scene(obstacles=[Obstacle([0.3, 0.0], 0.1)]))
        assert not world.obstacle_ahead([0.0, 0.0, 0.5])


class TestGripper:
    def test_close_near_object_attaches(self, model, params):
        world = home_world(model, params)
        ee = model.forward_kinematics(world.config, "ee_left")
        obj_pose = Pose(ee.translation + [0.01, 0.0, -0.02],
                        Quaternion.from_axis_angle([0, 0, 1], 0.4))
        world.scene.objects.append(SceneObject("mug", 1, obj_pose))
        set_gripper(world, "left", "close")
        att = world.attachments["left"]
        expected = compose(inverse(ee), obj_pose)
        assert np.allclose(att.grasp.translation, expected.translation, atol=1e-12)
        assert att.grasp.rotation.angle_to(expected.rotation) < 1e-12

    def test_close_far_from_objects(self, model, params):
        world = home_world(model, params, make_scene(
            objects=[SceneObject("mug", 1, Pose([5.0, 5.0, 1.0]))]))
        set_gripper(world, "left", "close")
        assert "left" not in world.attachments
        assert not world.gripper_open["left"]

    def test_release_freezes_object(self, model, params):
        world = home_world(model, params)
        ee = model.forward_kinematics(world.config, "ee_left")
        mug = SceneObject("mug", 1, Pose(ee.translation + [0.0, 0.0, -0.01]))
        world.scene.objects.append(mug)
        set_gripper(world, "left", "close")
        qdot = np.zeros(model.n)
        qdot[model.joint_index["torso_lift"]] = 0.1
        for _ in range(100):
            world.step(qdot, (0, 0, 0), 0.004)
        set_gripper(world, "left", "open")
        frozen = mug.pose.translation.copy()
        for _ in range(100):
            world.step(qdot, (0, 0, 0), 0.004)
        assert np.array_equal(mug.pose.translation, frozen)

    def test_attachment_rigidity_invariant(self, model, params):
        world = home_world(model, params)
        ee = model.forward_kinematics(world.config, "ee_left")
        mug = SceneObject("mug", 1, Pose(ee.translation + [0.0, 0.0, -0.01]))
        world.scene.objects.append(mug)
        set_gripper(world, "left", "close")
        rng = np.random.default_rng(3)
        qdot = rng.uniform(-0.2, 0.2, model.n)
        for _ in range(200):
            world.step(qdot, (0.1, 0.05, 0.2), 0.004)
            gripper = model.forward_kinematics(world.config, "ee_left")
            rel = compose(inverse(gripper), mug.pose)
            assert np.allclose(rel.translation,
                               world.attachments["left"].grasp.translation, atol=1e-9)
