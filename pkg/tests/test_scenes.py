import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneshift.config import SceneConfig
from sceneshift.errors import MissingInstanceError, SamplingExhaustedError
from sceneshift.scenes import (
    InstanceScene,
    ObjectSpec,
    analytic_flow,
    barycenter,
    build_scene,
    generate_scene,
    gt_displacement,
    sample_motion_spec,
)

from oracles import brute_force_barycenter, exhaustive_flow_consistency


def single_object_scene(velocity=(2, 0), ego=(0, 0), T=5, shape="rect", pos0=(10, 12)):
    cfg = SceneConfig(n_objects=1, T=T)
    obj = ObjectSpec(
        instance_id=1, shape=shape, size=(7, 7), pos0=pos0,
        velocity=velocity, color=(0.9, 0.2, 0.2),
    )
    return build_scene(cfg, [obj], ego=ego, texture_seed=3)


class TestBarycenter:
    def test_single_pixel(self):
        m = np.zeros((8, 8), dtype=np.int32)
        m[5, 3] = 1
        assert np.array_equal(barycenter(m, 1), [3.0, 5.0])

    def test_2x2_block(self):
        m = np.zeros((8, 8), dtype=np.int32)
        m[0:2, 0:2] = 1
        assert np.array_equal(barycenter(m, 1), [0.5, 0.5])

    def test_l_shape(self):
        m = np.zeros((4, 4), dtype=np.int32)
        for x, y in [(0, 0), (1, 0), (0, 1)]:
            m[y, x] = 1
        assert np.allclose(barycenter(m, 1), [1 / 3, 1 / 3])

    def test_missing_id(self):
        with pytest.raises(MissingInstanceError):
            barycenter(np.zeros((4, 4), dtype=np.int32), 2)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.integers(0, 3, size=(9, 11)).astype(np.int32)
        for inst in np.unique(m):
            if inst == 0:
                continue
            assert np.allclose(
                barycenter(m, int(inst)), brute_force_barycenter(m, int(inst)), atol=1e-12
            )


class TestGenerateScene:
    def test_constant_velocity_displacement(self):
        scene = single_object_scene(velocity=(2, 0), ego=(0, 0), T=5)
        d = scene.barycenters[0, 5] - scene.barycenters[0, 0]
        assert np.array_equal(d, [10.0, 0.0])

    def test_frame_and_flow_counts(self):
        scene = generate_scene(SceneConfig(T=5), seed=0)
        assert scene.frames.shape[0] == 6
        assert scene.flows_fwd.shape[0] == 5
        assert scene.flows_bwd.shape[0] == 5

    def test_determinism(self):
        cfg = SceneConfig(n_objects=2)
        a = generate_scene(cfg, seed=7)
        b = generate_scene(cfg, seed=7)
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.inst_map, b.inst_map)
        assert np.array_equal(a.flows_bwd, b.flows_bwd)
        assert np.array_equal(a.barycenters, b.barycenters)

    def test_pinned_velocity_via_ranges(self):
        cfg = SceneConfig(
            n_objects=1, velocity_range=(2, 2), velocity_jitter=0, ego_range=(0, 0)
        )
        scene = generate_scene(cfg, seed=3)
        assert np.array_equal(scene.object_velocities[0], [2, 2])
        d = scene.barycenters[0, 5] - scene.barycenters[0, 0]
        assert np.array_equal(d, [10.0, 10.0])

    def test_sampling_exhausted(self):
        cfg = SceneConfig(
            height=32, width=32, n_objects=1, size_range=(30, 30),
            velocity_range=(2, 2), velocity_jitter=0, max_retries=5,
        )
        with pytest.raises(SamplingExhaustedError):
            generate_scene(cfg, seed=0)

    def test_objects_stay_inside(self, scene_batch):
        for scene in scene_batch:
            for t in range(scene.T + 1):
                for inst in scene.instance_ids:
                    assert np.any(scene.inst_map[t] == inst)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            generate_scene(SceneConfig(height=30), seed=0)
        with pytest.raises(ValueError):
            generate_scene(SceneConfig(n_objects=0), seed=0)


class TestSceneInvariants:
    def test_barycenters_match_recompute(self, scene_batch):
        for scene in scene_batch:
            for i, inst in enumerate(scene.instance_ids):
                for t in range(scene.T + 1):
                    b = barycenter(scene.inst_map[t], int(inst))
                    assert np.abs(b - scene.barycenters[i, t]).max() < 1e-9

    def test_one_hot_seg_sums_to_one(self, scene_batch):
        for scene in scene_batch:
            assert np.array_equal(
                scene.seg.sum(axis=-1), np.ones_like(scene.class_map, dtype=np.uint8)
            )

    def test_seg_argmax_matches_class_of_instance(self, scene_batch):
        for scene in scene_batch:
            argmax_class = scene.seg.argmax(axis=-1) + 1
            assert np.array_equal(argmax_class, scene.class_map)
            for obj in scene.objects:
                pixels = scene.class_map[scene.inst_map == obj.instance_id]
                assert np.all(pixels == obj.class_id)

    def test_instance_pixels_share_one_class(self, scene_batch):
        for scene in scene_batch:
            for t in range(scene.T + 1):
                for inst in scene.instance_ids:
                    classes = np.unique(scene.class_map[t][scene.inst_map[t] == inst])
                    assert len(classes) == 1


class TestGtDisplacement:
    def test_static_object(self):
        scene = single_object_scene(velocity=(0, 0), ego=(0, 0))
        assert np.array_equal(gt_displacement(scene, 1), [0.0, 0.0])

    def test_velocity_plus_ego(self):
        scene = single_object_scene(velocity=(2, 0), ego=(1, 0), pos0=(5, 12))
        assert np.array_equal(gt_displacement(scene, 1), [15.0, 0.0])

    def test_matches_brute_force_rescan(self, scene_batch):
        scene = scene_batch[0]
        for inst in scene.instance_ids:
            expected = brute_force_barycenter(
                scene.inst_map[scene.T], int(inst)
            ) - brute_force_barycenter(scene.inst_map[0], int(inst))
            assert np.allclose(gt_displacement(scene, int(inst)), expected, atol=1e-12)

    def test_missing_instance(self, tiny_scene):
        with pytest.raises(MissingInstanceError):
            gt_displacement(tiny_scene, 99)


def overlap_scene():
    """Two objects whose paths cross, forcing occlusion events."""
    cfg = SceneConfig(n_objects=2, T=5)
    still = ObjectSpec(
        instance_id=1, shape="rect", size=(9, 9), pos0=(28, 28),
        velocity=(0, 0), color=(0.2, 0.8, 0.2),
    )
    mover = ObjectSpec(
        instance_id=2, shape="rect", size=(8, 8), pos0=(12, 29),
        velocity=(3, 0), color=(0.2, 0.2, 0.9),
    )
    return build_scene(cfg, [still, mover], ego=(0, 0), texture_seed=4)


class TestAnalyticFlow:
    def test_static_scene(self):
        scene = single_object_scene(velocity=(0, 0), ego=(0, 0))
        fwd, bwd, occ_f, occ_b = analytic_flow(scene, 3)
        assert np.array_equal(fwd, np.zeros_like(fwd))
        assert np.array_equal(bwd, np.zeros_like(bwd))
        assert np.array_equal(occ_f, np.ones_like(occ_f))
        assert np.array_equal(occ_b, np.ones_like(occ_b))

    def test_rigid_translation_backward_value(self):
        scene = single_object_scene(velocity=(1, 1), ego=(0, 0), pos0=(10, 10))
        _, bwd, _, _ = analytic_flow(scene, 3)
        inside = scene.inst_map[3] == 1
        assert inside.any()
        assert np.all(bwd[inside] == [-3.0, -3.0])

    def test_out_of_range_t(self, tiny_scene):
        with pytest.raises(ValueError):
            analytic_flow(tiny_scene, 0)
        with pytest.raises(ValueError):
            analytic_flow(tiny_scene, tiny_scene.T + 1)

    def test_overlap_consistency_exhaustive(self):
        scene = overlap_scene()
        # the mover does cross the still object
        assert (scene.inst_map[0] == 1).sum() > (scene.inst_map[3] == 1).sum()
        for t in (1, 3, 5):
            fwd, bwd, occ_f, occ_b = analytic_flow(scene, t)
            assert exhaustive_flow_consistency(fwd, bwd, occ_f, occ_b) == 0.0

    def test_random_scene_consistency(self, scene_batch):
        scene = scene_batch[1]
        fwd, bwd, occ_f, occ_b = analytic_flow(scene, scene.T)
        assert exhaustive_flow_consistency(fwd, bwd, occ_f, occ_b) == 0.0


class TestSampleMotionSpec:
    def test_lambda_one_is_gt(self, default_scene):
        spec = sample_motion_spec(default_scene, default_scene.n_instances, 1.0, seed=0)
        for inst, delta in spec.entries:
            assert np.allclose(delta, gt_displacement(default_scene, inst))

    def test_lambda_scales(self):
        scene = single_object_scene(velocity=(2, 0), ego=(0, 0), pos0=(5, 12))
        spec = sample_motion_spec(scene, 1, 1.5, seed=0)
        assert np.allclose(spec.entries[0][1], [15.0, 0.0])

    def test_lambda_zero(self, default_scene):
        spec = sample_motion_spec(default_scene, default_scene.n_instances, 0.0, seed=1)
        for _, delta in spec.entries:
            assert delta == (0.0, 0.0)

    def test_too_many_controlled(self, default_scene):
        with pytest.raises(ValueError):
            sample_motion_spec(default_scene, default_scene.n_instances + 1, 1.0, seed=0)

    def test_seeded_choice_deterministic(self, default_scene):
        a = sample_motion_spec(default_scene, 1, 1.0, seed=9)
        b = sample_motion_spec(default_scene, 1, 1.0, seed=9)
        assert a == b
