import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneshift.errors import TrackingUndefinedError
from sceneshift.evaluate import (
    EvalReport,
    TrackResult,
    evaluate_setting,
    lambda_response,
    masked_ncc_map,
    nde,
    track_object,
)
from sceneshift.model import infer
from sceneshift.scenes import MotionSpec, generate_scene, gt_displacement
from sceneshift.training import build_state

from conftest import TINY_SCENE, tiny_train_config


@pytest.fixture(scope="module")
def tiny_model():
    state = build_state(tiny_train_config())
    state.model.eval()
    return state.model


class TestTrackObject:
    def test_identity_generation(self, default_scene):
        scene = default_scene
        for inst in scene.instance_ids:
            r = track_object(scene.frames[0], scene.frames[0], scene.inst_map[0], int(inst))
            assert r.found
            assert r.score > 0.99
            idx = scene.index_of(int(inst))
            assert np.abs(r.position - scene.barycenters[idx, 0]).max() < 1e-6

    def test_integer_shift(self, default_scene):
        scene = default_scene
        shifted = np.zeros_like(scene.frames[0])
        shifted[:, 5:] = scene.frames[0][:, :-5]
        for inst in scene.instance_ids:
            idx = scene.index_of(int(inst))
            x0 = scene.barycenters[idx, 0][0]
            if x0 + 5 >= scene.width - 8:
                continue
            r = track_object(shifted, scene.frames[0], scene.inst_map[0], int(inst))
            assert r.found and r.score > 0.99
            assert np.abs(r.position - (scene.barycenters[idx, 0] + [5, 0])).max() < 1e-6

    def test_noise_frames_not_found(self, default_scene):
        scene = default_scene
        inst = int(scene.instance_ids[0])
        rng = np.random.default_rng(0)
        found = 0
        for _ in range(100):
            noise = rng.random((scene.height, scene.width, 3)).astype(np.float32)
            r = track_object(noise, scene.frames[0], scene.inst_map[0], inst)
            found += int(r.found)
        assert found <= 2

    def test_zero_variance_template(self):
        frame0 = np.full((32, 32, 3), 0.5, dtype=np.float32)
        inst = np.zeros((32, 32), dtype=np.int32)
        inst[4:12, 4:12] = 1
        with pytest.raises(TrackingUndefinedError):
            track_object(frame0.copy(), frame0, inst, 1)

    def test_small_template_rejected(self):
        frame0 = np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)
        inst = np.zeros((32, 32), dtype=np.int32)
        inst[4:6, 4:6] = 1
        with pytest.raises(ValueError):
            track_object(frame0.copy(), frame0, inst, 1)

    def test_self_consistency_on_gt_final_frames(self):
        # tracked position vs the rigid ground-truth position at t=T
        total = 0
        good = 0
        from sceneshift.config import SceneConfig

        for seed in range(20):
            scene = generate_scene(SceneConfig(), seed=3000 + seed)
            for i, inst in enumerate(scene.instance_ids):
                true_pos = (
                    scene.barycenters[i, 0]
                    + scene.T * (scene.object_velocities[i] + scene.ego_motion)
                )
                r = track_object(
                    scene.frames[scene.T], scene.frames[0], scene.inst_map[0], int(inst)
                )
                total += 1
                if r.found and np.abs(r.position - true_pos).max() <= 1.0:
                    good += 1
        assert good / total >= 0.95


class TestNcc:
    def test_score_range(self, default_scene):
        scene = default_scene
        inst = int(scene.instance_ids[0])
        ys, xs = np.nonzero(scene.inst_map[0] == inst)
        tpl = scene.frames[0][ys.min(): ys.max() + 1, xs.min(): xs.max() + 1]
        mask = scene.inst_map[0][ys.min(): ys.max() + 1, xs.min(): xs.max() + 1] == inst
        scores = masked_ncc_map(scene.frames[0], tpl, mask)
        assert scores.min() >= -1.0 and scores.max() <= 1.0
        assert scores.max() > 0.999


class TestNde:
    def test_exact_hit(self):
        track = TrackResult(1, True, np.array([10.0, 10.0]), 1.0)
        assert nde(track, np.zeros(2), np.array([10.0, 10.0]), np.array([4.0, 0.0])) == 0.0

    def test_ratio(self):
        track = TrackResult(1, True, np.array([2.0, 0.0]), 1.0)
        val = nde(track, np.zeros(2), np.array([0.0, 0.0]), np.array([4.0, 0.0]))
        assert val == pytest.approx(0.5)

    def test_zero_gt_excluded(self):
        track = TrackResult(1, True, np.array([1.0, 1.0]), 1.0)
        with pytest.raises(ValueError):
            nde(track, np.zeros(2), np.ones(2), np.zeros(2))

    @given(
        st.tuples(st.floats(-20, 20), st.floats(-20, 20)),
        st.floats(0.1, 5.0),
    )
    @settings(max_examples=30, deadline=None)
    def test_translation_invariance_and_scale_covariance(self, shift, scale):
        shift = np.asarray(shift)
        pos = np.array([3.0, 4.0])
        start = np.array([0.0, 0.0])
        end_user = np.array([5.0, 5.0])
        end_gt = np.array([4.0, 2.0])
        track = TrackResult(1, True, pos, 1.0)
        base = nde(track, start, end_user, end_gt)
        shifted = nde(
            TrackResult(1, True, pos + shift, 1.0),
            start + shift, end_user + shift, end_gt + shift,
        )
        assert shifted == pytest.approx(base, rel=1e-9)
        scaled = nde(
            TrackResult(1, True, start + (pos - start) * scale, 1.0),
            start,
            start + (end_user - start) * scale,
            start + (end_gt - start) * scale,
        )
        assert scaled == pytest.approx(base, rel=1e-9)


class TestInference:
    def test_shapes_and_determinism(self, tiny_model, tiny_scene):
        spec = MotionSpec(entries=((1, (2.0, 0.0)),))
        a = infer(tiny_model, tiny_scene, spec, seed=5)
        b = infer(tiny_model, tiny_scene, spec, seed=5)
        assert a.frames.shape == (tiny_scene.T, 32, 32, 3)
        assert np.array_equal(a.frames, b.frames)
        assert a.frames.min() >= 0 and a.frames.max() <= 1
        c = infer(tiny_model, tiny_scene, spec, seed=6)
        assert not np.array_equal(a.frames, c.frames)

    def test_empty_spec_prior_sampling(self, tiny_model, tiny_scene):
        res = infer(tiny_model, tiny_scene, MotionSpec(entries=()), seed=1)
        assert all(not k for k in res.known.values())
        assert len(res.displacements) == tiny_scene.n_instances

    def test_all_known_echoes_exactly(self, tiny_model, tiny_scene):
        entries = tuple(
            (int(i), (1.37 + i, -2.2)) for i in tiny_scene.instance_ids
        )
        res = infer(tiny_model, tiny_scene, MotionSpec(entries=entries), seed=2)
        for inst, delta in entries:
            assert res.displacements[inst] == delta
            assert res.known[inst]

    def test_variants_run(self, tiny_model, tiny_scene):
        spec = MotionSpec(entries=((1, (2.0, 0.0)),))
        for variant in ("full", "edgeless", "no_gcn"):
            res = infer(tiny_model, tiny_scene, spec, seed=1, variant=variant)
            assert res.frames.shape[0] == tiny_scene.T
        with pytest.raises(ValueError):
            infer(tiny_model, tiny_scene, spec, seed=1, variant="bogus")


@pytest.fixture(scope="module")
def tiny_corpus():
    return [generate_scene(TINY_SCENE, seed=600 + i) for i in range(3)]


class TestEvaluateSetting:

    def test_deterministic_reports(self, tiny_model, tiny_corpus):
        a = evaluate_setting(tiny_model, tiny_corpus, "oracle", seed=3)
        b = evaluate_setting(tiny_model, tiny_corpus, "oracle", seed=3)
        assert a.to_json() == b.to_json()

    def test_oracle_uses_gt_displacements(self, tiny_model, tiny_corpus):
        report = evaluate_setting(tiny_model, tiny_corpus, "oracle", seed=0)
        for obj in report.objects:
            scene = tiny_corpus[obj.scene_index]
            gt = gt_displacement(scene, obj.instance_id)
            assert np.allclose(obj.user_delta, gt)

    def test_custom_all_bypass_exact(self, tiny_model, tiny_corpus):
        report = evaluate_setting(tiny_model, tiny_corpus, "custom-all", seed=0)
        per_scene = {}
        for obj in report.objects:
            per_scene.setdefault(obj.scene_index, 0)
            per_scene[obj.scene_index] += 1
            assert obj.predicted_delta == obj.user_delta
        for k, scene in enumerate(tiny_corpus):
            assert per_scene[k] == scene.n_instances

    def test_empty_corpus_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            evaluate_setting(tiny_model, [], "oracle")

    def test_table_format(self, tiny_model, tiny_corpus):
        report = evaluate_setting(tiny_model, tiny_corpus, "oracle", seed=0)
        table = report.table()
        assert "NDE" in table and "Acc" in table

    def test_lambda_response_runs(self, tiny_model, tiny_corpus):
        out = lambda_response(tiny_model, tiny_corpus, lambdas=(0.5, 1.0), seed=0)
        assert "pearson_r" in out
