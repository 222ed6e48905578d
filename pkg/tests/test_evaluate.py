import numpy as np
import pytest

from rotdet import evaluate, synth
from rotdet.geometry import Box
from rotdet.pipeline import DetectedFace


class TestTrueCoarseAngles:
    def test_theta1(self):
        assert evaluate._true_theta1(0.0) == 0.0
        assert evaluate._true_theta1(90.0) == 0.0
        assert evaluate._true_theta1(91.0) == 180.0
        assert evaluate._true_theta1(180.0) == 180.0
        assert evaluate._true_theta1(-120.0) == 180.0

    def test_theta2_puts_residual_in_quarter_turn(self):
        for residual in np.arange(-90.0, 90.1, 2.5):
            t2 = evaluate._true_theta2(residual)
            assert t2 in (-90.0, 0.0, 90.0)
            assert -45.0 <= residual - t2 <= 45.0


class TestRotateGroundTruth:
    def test_zero_rotation_identity(self):
        faces = [(Box(3, 4, 10), 25.0)]
        assert evaluate.rotate_ground_truth(faces, 0, 64, 48) == faces

    def test_90_rotation(self):
        faces = [(Box(0, 0, 10), 10.0)]
        out = evaluate.rotate_ground_truth(faces, 90, 64, 48)
        box, theta = out[0]
        assert (box.a, box.b, box.w) == (38.0, 0.0, 10.0)
        assert theta == 100.0

    def test_angle_wraps(self):
        faces = [(Box(0, 0, 10), 170.0)]
        _, theta = evaluate.rotate_ground_truth(faces, 90, 64, 48)[0]
        assert theta == -100.0


@pytest.fixture(scope="module")
def eval_corpus():
    return synth.gen_synthetic(30, seed=21)


class TestOrientationMetrics:
    def test_perfect_predictor_ceiling(self, eval_corpus):
        def oracle(stage, box, true_angle):
            if stage == 1:
                return 0.0 if -90.0 < true_angle <= 90.0 else 180.0
            if stage == 2:
                return evaluate._true_theta2(true_angle)
            return true_angle

        m = evaluate.orientation_metrics({}, eval_corpus, predictor=oracle)
        assert m["stage1_accuracy"] == 1.0
        assert m["stage2_accuracy"] == 1.0
        assert m["stage3_mae_deg"] == pytest.approx(0.0, abs=1e-9)
        assert m["n_stage1"] > 0 and m["n_stage2"] > 0 and m["n_stage3"] > 0

    def test_inverted_predictor_floor(self, eval_corpus):
        def upside_down(stage, box, true_angle):
            if stage == 1:
                return 180.0 if -90.0 < true_angle <= 90.0 else 0.0
            if stage == 2:
                return evaluate._true_theta2(true_angle)
            return true_angle

        m = evaluate.orientation_metrics({}, eval_corpus, predictor=upside_down)
        assert m["stage1_accuracy"] == 0.0

    def test_no_faces_gives_nan(self):
        empty = [synth.SynthImage(
            image=np.zeros((48, 48, 3), dtype=np.uint8), faces=[])]
        m = evaluate.orientation_metrics({}, empty, predictor=lambda *a: 0.0)
        assert np.isnan(m["stage1_accuracy"])
        assert np.isnan(m["stage3_mae_deg"])


class TestRecallAtFP:
    def test_perfect_detector(self, eval_corpus):
        def perfect(img):
            # the injected detector sees the (possibly rotated) image;
            # for rotation 0 the corpus labels apply directly
            for si in eval_corpus:
                if si.image.shape == img.shape and np.array_equal(si.image, img):
                    return [DetectedFace(box=b, theta_rip=t, score=0.99)
                            for b, t in si.faces]
            return []

        r = evaluate.recall_at_fp({}, eval_corpus, rotation=0, detector=perfect)
        assert r["recall"] == 1.0
        assert r["fp_budget"] == pytest.approx(len(eval_corpus) / 28.0)

    def test_blind_detector(self, eval_corpus):
        r = evaluate.recall_at_fp({}, eval_corpus, detector=lambda img: [])
        assert r["recall"] == 0.0 and r["detections"] == 0

    def test_fp_budget_cuts_low_scores(self, eval_corpus):
        # true faces scored high plus many low-scoring false alarms:
        # the budget sweep must stop before the junk buys more recall
        def noisy(img):
            for si in eval_corpus:
                if si.image.shape == img.shape and np.array_equal(si.image, img):
                    dets = [DetectedFace(box=b, theta_rip=t, score=0.9)
                            for b, t in si.faces]
                    dets.append(DetectedFace(box=Box(0.5, 0.5, 5), theta_rip=0,
                                             score=0.1))
                    return dets
            return []

        r = evaluate.recall_at_fp({}, eval_corpus, fp_budget=1.0,
                                  detector=noisy)
        assert r["recall"] == 1.0  # high-scoring prefix already has full recall


class TestMatchRotatedDetections:
    def test_exact_match(self):
        orig = [DetectedFace(box=Box(4, 6, 10), theta_rip=20.0, score=0.9)]
        rot = [DetectedFace(box=Box(48 - 6 - 10, 4, 10), theta_rip=110.0,
                            score=0.9)]
        m, n = evaluate.match_rotated_detections(orig, rot, 90, 64, 48)
        assert (m, n) == (1, 1)

    def test_angle_mismatch_rejected(self):
        orig = [DetectedFace(box=Box(4, 6, 10), theta_rip=20.0, score=0.9)]
        rot = [DetectedFace(box=Box(48 - 6 - 10, 4, 10), theta_rip=160.0,
                            score=0.9)]
        m, _ = evaluate.match_rotated_detections(orig, rot, 90, 64, 48)
        assert m == 0

    def test_box_mismatch_rejected(self):
        orig = [DetectedFace(box=Box(4, 6, 10), theta_rip=20.0, score=0.9)]
        rot = [DetectedFace(box=Box(0, 30, 10), theta_rip=110.0, score=0.9)]
        m, _ = evaluate.match_rotated_detections(orig, rot, 90, 64, 48)
        assert m == 0
