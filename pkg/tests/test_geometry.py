import numpy as np
import pytest

from rotdet import geometry as geo
from rotdet.geometry import Box, OrientationFrame
from conftest import naive_nms, naive_rot


def _rand_img(rng, h, w, c=3):
    return rng.random((h, w, c)).astype(np.float32)


class TestRotExact:
    def test_rot180_involution(self, rng):
        img = _rand_img(rng, 7, 5)
        assert np.array_equal(geo.rot_exact(geo.rot_exact(img, 180), 180), img)

    def test_rot90_four_times_identity(self, rng):
        img = _rand_img(rng, 6, 9)
        out = img
        for _ in range(4):
            out = geo.rot_exact(out, 90)
        assert np.array_equal(out, img)

    @pytest.mark.parametrize("angle", [90, 180, 270])
    def test_matches_bruteforce(self, rng, angle):
        img = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
        assert np.array_equal(geo.rot_exact(img, angle), naive_rot(img, angle))

    def test_group_relations(self, rng):
        img = _rand_img(rng, 5, 8)
        assert np.array_equal(geo.rot_exact(geo.rot_exact(img, 90), 90),
                              geo.rot_exact(img, 180))
        assert np.array_equal(geo.rot_exact(geo.rot_exact(img, 90), 270), img)


class TestRemapWindow:
    def test_identity_frame(self):
        win = Box(3, 4, 5)
        out = geo.remap_window(win, OrientationFrame.UP, OrientationFrame.UP, 20, 20)
        assert (out.a, out.b, out.w) == (3, 4, 5)

    def test_full_square_window(self):
        win = Box(0, 0, 16)
        for to in OrientationFrame:
            out = geo.remap_window(win, OrientationFrame.UP, to, 16, 16)
            assert (out.a, out.b, out.w) == (0, 0, 16)

    def test_oob_raises(self):
        with pytest.raises(geo.WindowOutOfBounds, match="oob"):
            geo.remap_window(Box(18, 0, 5), OrientationFrame.UP,
                             OrientationFrame.UP, 20, 20)

    @pytest.mark.parametrize("to,angle", [
        (OrientationFrame.RIGHT, 90),
        (OrientationFrame.DOWN, 180),
        (OrientationFrame.LEFT, 270),
    ])
    def test_crop_commutes_with_rotation(self, rng, to, angle):
        W, H = 64, 48
        img = _rand_img(rng, H, W)
        rot = geo.rot_exact(img, angle)
        for _ in range(50):
            s = int(rng.integers(1, 17))
            x = int(rng.integers(0, W - s + 1))
            y = int(rng.integers(0, H - s + 1))
            out = geo.remap_window(Box(x, y, s), OrientationFrame.UP, to, W, H)
            xa, ya = int(out.a), int(out.b)
            crop_then_rot = geo.rot_exact(img[y : y + s, x : x + s], angle)
            remap_then_crop = rot[ya : ya + s, xa : xa + s]
            assert np.array_equal(crop_then_rot, remap_then_crop)

    def test_roundtrip_between_frames(self, rng):
        W, H = 40, 30
        for _ in range(30):
            s = int(rng.integers(1, 12))
            x = int(rng.integers(0, W - s + 1))
            y = int(rng.integers(0, H - s + 1))
            f1 = OrientationFrame(int(rng.integers(0, 4)))
            f2 = OrientationFrame(int(rng.integers(0, 4)))
            here = Box(float(x), float(y), float(s))
            # move the window into frame f1's coords first
            w1 = geo.remap_window(here, OrientationFrame.UP, f1, W, H)
            w2 = geo.remap_window(w1, f1, f2, W, H)
            back = geo.remap_window(w2, f2, OrientationFrame.UP, W, H)
            assert (back.a, back.b, back.w) == (here.a, here.b, here.w)


class TestRotateContinuous:
    def test_zero_angle_identity(self, rng):
        img = _rand_img(rng, 10, 12)
        assert np.allclose(geo.rotate_continuous(img, 0.0), img, atol=1e-6)

    def test_180_matches_exact(self, rng):
        img = _rand_img(rng, 8, 8)
        cont = geo.rotate_continuous(img, 180.0)
        assert np.allclose(cont, geo.rot_exact(img, 180), atol=1e-5)

    def test_inverse_composition_center(self):
        # smooth ramp: bilinear resampling is near-exact on linear signals
        yy, xx = np.indices((48, 48))
        img = ((xx + 2 * yy) / 160.0).astype(np.float32)[..., None]
        back = geo.rotate_continuous(geo.rotate_continuous(img, 30.0), -30.0)
        m = 12  # 50% central crop margin
        err = np.abs(back[m:-m, m:-m] - img[m:-m, m:-m]).mean()
        assert err < 0.02

    def test_direction_clockwise(self):
        # a bright pixel to the right of center moves downward under +90
        img = np.zeros((9, 9, 1), dtype=np.float32)
        img[4, 7] = 1.0
        out = geo.rotate_continuous(img, 90.0)
        assert out[7, 4] == pytest.approx(1.0, abs=1e-5)


class TestCropResize:
    def test_full_image_identity(self, rng):
        img = _rand_img(rng, 12, 12)
        t = geo.crop_resize(img, Box(0, 0, 12), 12)
        assert np.allclose(t, img.transpose(2, 0, 1) * 2 - 1, atol=1e-6)

    def test_constant_image(self):
        img = np.full((10, 10, 3), 0.25, dtype=np.float32)
        t = geo.crop_resize(img, Box(2, 2, 6), 4)
        assert np.allclose(t, 0.25 * 2 - 1, atol=1e-6)

    def test_downscale_matches_bilinear_oracle(self, rng):
        img = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float32)[..., None]
        t = geo.crop_resize(img, Box(0, 0, 8), 4)
        # 2x box downscale of a checkerboard averages each 2x2 block to 0.5
        # at sample points exactly between pixels
        assert np.allclose(t, 0.0, atol=1e-6)  # normalized: 0.5*2-1

    def test_oob_zero_padded(self, rng):
        img = np.ones((8, 8, 1), dtype=np.float32)
        t = geo.crop_resize(img, Box(-8, -8, 8), 8)
        # window entirely above-left except one corner sample region
        assert t.min() == pytest.approx(-1.0)

    def test_bad_width(self):
        with pytest.raises(ValueError):
            geo.crop_resize_many(np.ones((4, 4, 1)), np.array([[0, 0, 0.0]]), 2)


class TestBboxTransform:
    def test_identity(self):
        b = Box(2, 3, 10)
        assert geo.bbox_targets(b, b) == pytest.approx((1.0, 0.0, 0.0))

    def test_hand_computed(self):
        t = geo.bbox_targets(Box(0, 0, 10), Box(1, 1, 12))
        assert t == pytest.approx((1.2, 1 / 6, 1 / 6))

    def test_apply_inverts(self):
        box, gt = Box(0, 0, 10), Box(1, 1, 12)
        out = geo.bbox_apply(box, geo.bbox_targets(box, gt))
        assert (out.a, out.b, out.w) == pytest.approx((gt.a, gt.b, gt.w), abs=1e-6)

    def test_roundtrip_random(self, rng):
        n = 10_000
        boxes = np.stack([rng.uniform(-50, 50, n), rng.uniform(-50, 50, n),
                          rng.uniform(0.5, 80, n)], axis=1)
        gts = np.stack([rng.uniform(-50, 50, n), rng.uniform(-50, 50, n),
                        rng.uniform(0.5, 80, n)], axis=1)
        rec = geo.bbox_apply_arr(boxes, geo.bbox_targets_arr(boxes, gts))
        assert np.abs(rec - gts).max() < 1e-5

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0)
        with pytest.raises(ValueError):
            geo.bbox_apply(Box(0, 0, 5), (0.0, 0.0, 0.0))


class TestIoU:
    def test_identical(self):
        assert geo.iou(Box(1, 1, 4), Box(1, 1, 4)) == pytest.approx(1.0)

    def test_disjoint(self):
        assert geo.iou(Box(0, 0, 2), Box(10, 10, 2)) == 0.0

    def test_hand_value(self):
        assert geo.iou(Box(0, 0, 2), Box(1, 1, 2)) == pytest.approx(1 / 7)

    def test_symmetric(self, rng):
        for _ in range(20):
            a = Box(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 5))
            b = Box(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 5))
            assert geo.iou(a, b) == pytest.approx(geo.iou(b, a))


class TestNMS:
    def test_single_box(self):
        out = geo.nms([(Box(0, 0, 2), 0.5)], 0.3)
        assert len(out) == 1

    def test_full_overlap(self):
        out = geo.nms([(Box(0, 0, 2), 0.9), (Box(0, 0, 2), 0.8)], 0.3)
        assert len(out) == 1 and out[0][1] == 0.9

    def test_matches_bruteforce(self, rng):
        n = 1000
        boxes = np.stack([rng.uniform(0, 100, n), rng.uniform(0, 100, n),
                          rng.uniform(2, 30, n)], axis=1)
        scores = rng.random(n)
        got = geo.nms_indices(boxes, scores, 0.4)
        ref = naive_nms(boxes, scores, 0.4)
        assert got == ref

    def test_survivors_pairwise_below_thresh(self, rng):
        n = 200
        boxes = np.stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n),
                          rng.uniform(2, 20, n)], axis=1)
        scores = rng.random(n)
        keep = geo.nms_indices(boxes, scores, 0.35)
        assert set(keep) <= set(range(n))
        for i in keep:
            for j in keep:
                if i != j:
                    assert geo.iou_many(boxes[i], boxes[j][None])[0] <= 0.35

    def test_output_sorted_descending(self, rng):
        n = 50
        boxes = np.stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n),
                          rng.uniform(2, 10, n)], axis=1)
        scores = rng.random(n)
        out = geo.nms([(Box(*b), s) for b, s in zip(boxes, scores)], 0.3)
        got = [s for _, s in out]
        assert got == sorted(got, reverse=True)


class TestAngles:
    def test_normalize_range(self):
        assert geo.normalize_angle(290) == -70
        assert geo.normalize_angle(-180) == 180
        assert geo.normalize_angle(180) == 180
        assert geo.normalize_angle(0) == 0

    def test_frame_for_theta(self):
        assert geo.frame_for_theta(0) == OrientationFrame.UP
        assert geo.frame_for_theta(180) == OrientationFrame.DOWN
        assert geo.frame_for_theta(90) == OrientationFrame.LEFT
        assert geo.frame_for_theta(-90) == OrientationFrame.RIGHT
