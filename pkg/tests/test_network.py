import json
import math

import numpy as np
import pytest

from latetrack.boxes import BoundingBox
from latetrack.errors import ValidationError
from latetrack.motion import MotionHistory, NormalizedMotion, encode_motion
from latetrack.network import (PMWeights, constant_factor_weights, forward_batch,
                               history_input, init_weights, l1_loss, load_weights,
                               pm_backward, pm_forward, pm_predict, save_weights,
                               zero_weights)

from _oracles import central_differences

SMALL = dict(k=3, n_heads=2, c_enc=8, c_dec=6)


def random_input(k=3, seed=0):
    return np.random.default_rng(seed).normal(0, 0.3, size=(k, 8))


def cv_history(vx=2.0, vy=-1.0, k=4, size=10.0):
    track = [BoundingBox(vx * i, vy * i, size, size) for i in range(k + 1)]
    motions = tuple(encode_motion(a, b) for a, b in zip(track, track[1:]))
    return track, MotionHistory(motions, (1,) * k)


class TestForward:
    def test_zero_weights_give_zero_factors(self):
        w = zero_weights(**SMALL)
        out = pm_forward(w, random_input(seed=1))
        assert out.shape == (2, 4)
        assert np.all(out == 0.0)

    def test_output_shape_any_geometry(self):
        w = init_weights(k=5, n_heads=3, c_enc=16, c_dec=8, seed=2)
        out = pm_forward(w, random_input(k=5, seed=3))
        assert out.shape == (3, 4)
        assert np.all(np.isfinite(out))

    def test_output_bias_reaches_every_head(self):
        w = zero_weights(**SMALL)
        w.out_b[:] = [1.5, -0.5, 0.25, 0.0]
        out = pm_forward(w, random_input(seed=4))
        for n in range(2):
            assert out[n].tolist() == [1.5, -0.5, 0.25, 0.0]

    def test_constant_factor_fixture(self):
        w = constant_factor_weights(k=3, n_heads=3, c_enc=8, c_dec=6)
        out = pm_forward(w, random_input(seed=5))
        for n in range(3):
            assert out[n] == pytest.approx([n + 1] * 4)

    def test_head_relu_blocks_negative_bias(self):
        w = zero_weights(**SMALL)
        w.out_w[:, 0] = 1.0
        w.head_b[0, 0] = -2.0
        w.head_b[1, 0] = 2.0
        out = pm_forward(w, random_input(seed=6))
        assert out[0].tolist() == [0.0] * 4
        assert out[1].tolist() == [2.0] * 4

    def test_head_independence(self):
        w = init_weights(seed=7, **SMALL)
        base = pm_forward(w, random_input(seed=8))
        w2 = w.copy()
        w2.head_w[1] += 0.5
        w2.head_b[1] -= 0.25
        out = pm_forward(w2, random_input(seed=8))
        assert np.array_equal(out[0], base[0])
        assert not np.array_equal(out[1], base[1])

    def test_batched_forward_matches_single(self):
        w = init_weights(seed=9, **SMALL)
        xs = np.stack([random_input(seed=s) for s in (10, 11, 12)])
        batched, cache = forward_batch(w, xs, keep_cache=True)
        assert cache is not None
        for i in range(3):
            assert batched[i] == pytest.approx(pm_forward(w, xs[i]), abs=1e-12)

    def test_wrong_input_shape_rejected(self):
        w = init_weights(seed=0, **SMALL)
        with pytest.raises(ValidationError):
            pm_forward(w, np.zeros((4, 8)))
        with pytest.raises(ValidationError):
            pm_forward(w, np.zeros((3, 7)))

    def test_non_finite_input_rejected(self):
        w = init_weights(seed=0, **SMALL)
        x = random_input()
        x[0, 0] = float("nan")
        with pytest.raises(ValidationError):
            pm_forward(w, x)


class TestWeights:
    def test_shape_validation(self):
        good = zero_weights(**SMALL)
        kwargs = {name: getattr(good, name) for name in good.params()}
        kwargs["enc_w"] = np.zeros((3, 3))
        with pytest.raises(ValidationError):
            PMWeights(k=3, n_heads=2, c_enc=8, c_dec=6, **kwargs)

    def test_non_finite_rejected(self):
        good = zero_weights(**SMALL)
        kwargs = {name: getattr(good, name).copy() for name in good.params()}
        kwargs["dec_b"][0] = float("inf")
        with pytest.raises(ValidationError):
            PMWeights(k=3, n_heads=2, c_enc=8, c_dec=6, **kwargs)

    def test_init_is_deterministic_and_bounded(self):
        a = init_weights(seed=13, **SMALL)
        b = init_weights(seed=13, **SMALL)
        for name, arr in a.params().items():
            assert np.array_equal(arr, b.params()[name])
        assert np.max(np.abs(a.enc_w)) <= math.sqrt(6.0 / 8)
        assert np.all(a.enc_b == 0.0)

    def test_copy_is_deep(self):
        a = init_weights(seed=14, **SMALL)
        b = a.copy()
        b.enc_w[0, 0] += 1.0
        assert a.enc_w[0, 0] != b.enc_w[0, 0]


class TestBackward:
    def test_matches_finite_differences(self):
        w = init_weights(seed=21, **SMALL)
        x = random_input(seed=22)
        g_out = np.random.default_rng(23).normal(size=(2, 4))
        grads = pm_backward(w, x, g_out)

        def scalar():
            return float(np.sum(pm_forward(w, x) * g_out))

        fd = central_differences(scalar, w.params(), h=1e-6)
        for name in fd:
            denom = max(np.max(np.abs(fd[name])), 1e-8)
            assert np.max(np.abs(grads[name] - fd[name])) / denom < 1e-4, name

    def test_l1_pipeline_gradient(self):
        w = init_weights(seed=31, **SMALL)
        _, hist = cv_history(k=3)
        x = history_input(hist)
        speed = NormalizedMotion(0.21, -0.07, 0.0, 0.0)
        targets = np.array([[0.3, -0.1, 0.0, 0.0], [0.6, -0.2, 0.0, 0.0]])

        def scalar():
            loss, _ = l1_loss(pm_forward(w, x), speed, targets)
            return loss

        loss, g_factor = l1_loss(pm_forward(w, x), speed, targets)
        grads = pm_backward(w, x, g_factor)
        fd = central_differences(scalar, w.params(), h=1e-6)
        for name in fd:
            denom = max(np.max(np.abs(fd[name])), 1e-8)
            assert np.max(np.abs(grads[name] - fd[name])) / denom < 1e-4, name

    def test_zero_grad_out_gives_zero_grads(self):
        w = init_weights(seed=41, **SMALL)
        grads = pm_backward(w, random_input(seed=42), np.zeros((2, 4)))
        for arr in grads.values():
            assert np.all(arr == 0.0)

    def test_grad_shapes_mirror_params(self):
        w = init_weights(seed=43, **SMALL)
        grads = pm_backward(w, random_input(seed=44), np.ones((2, 4)))
        assert set(grads) == set(w.params())
        for name, arr in grads.items():
            assert arr.shape == w.params()[name].shape


class TestL1Loss:
    def test_exact_match_is_zero(self):
        speed = NormalizedMotion(0.1, 0.2, 0.0, 0.0)
        factors = np.array([[2.0, 0.5, 0.0, 0.0]])
        targets = factors * np.array(speed.as_tuple())
        loss, grad = l1_loss(factors, speed, targets)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_unit_diff_means_unit_loss(self):
        speed = NormalizedMotion(1.0, 1.0, 1.0, 1.0)
        loss, grad = l1_loss(np.ones((1, 4)) * 2.0, speed, np.ones((1, 4)))
        assert loss == 1.0
        assert grad == pytest.approx(np.full((1, 4), 0.25))

    def test_zero_speed_blocks_gradient(self):
        speed = NormalizedMotion(0.0, 0.0, 0.0, 0.0)
        loss, grad = l1_loss(np.ones((2, 4)), speed, np.ones((2, 4)) * 0.5)
        assert loss == 0.5
        assert np.all(grad == 0.0)

    def test_shape_mismatch_rejected(self):
        speed = NormalizedMotion(0.1, 0, 0, 0)
        with pytest.raises(ValidationError):
            l1_loss(np.ones((1, 4)), speed, np.ones((2, 4)))


class TestPredict:
    def test_zero_factors_hold_the_box_still(self):
        track, hist = cv_history(k=3)
        w = zero_weights(k=3, n_heads=2, c_enc=8, c_dec=6)
        boxes = pm_predict(w, hist, track[-1])
        assert boxes == [track[-1], track[-1]]

    def test_bias_n_heads_continue_constant_velocity(self):
        track, hist = cv_history(vx=3.0, vy=1.5, k=3)
        w = constant_factor_weights(k=3, n_heads=2, c_enc=8, c_dec=6)
        boxes = pm_predict(w, hist, track[-1])
        for n, box in enumerate(boxes, start=1):
            assert box.cx == pytest.approx(track[-1].cx + 3.0 * n, abs=1e-9)
            assert box.cy == pytest.approx(track[-1].cy + 1.5 * n, abs=1e-9)
            assert box.w == pytest.approx(10.0, abs=1e-9)

    def test_static_history_predicts_static(self):
        b = BoundingBox(5, 5, 12, 8)
        hist = MotionHistory((NormalizedMotion(0, 0, 0, 0),) * 3, (1, 1, 1))
        w = init_weights(seed=51, k=3, n_heads=2, c_enc=8, c_dec=6)
        assert pm_predict(w, hist, b) == [b, b]

    def test_history_length_mismatch_rejected(self):
        track, hist = cv_history(k=4)
        w = init_weights(seed=52, k=3, n_heads=2, c_enc=8, c_dec=6)
        with pytest.raises(ValidationError):
            pm_predict(w, hist, track[-1])

    def test_scale_invariance(self):
        track, hist = cv_history(vx=2.5, vy=-0.5, k=3)
        w = init_weights(seed=53, k=3, n_heads=2, c_enc=8, c_dec=6)
        base = pm_predict(w, hist, track[-1])
        for s in (0.1, 10.0):
            scaled_track = [BoundingBox(b.x * s, b.y * s, b.w * s, b.h * s) for b in track]
            motions = tuple(encode_motion(a, b) for a, b in zip(scaled_track, scaled_track[1:]))
            scaled = pm_predict(w, MotionHistory(motions, (1, 1, 1)), scaled_track[-1])
            for got, want in zip(scaled, base):
                assert got.cx == pytest.approx(want.cx * s, abs=1e-9 * max(1, abs(want.cx * s)))
                assert got.w == pytest.approx(want.w * s, abs=1e-9 * max(1, want.w * s))


class TestHistoryInput:
    def test_rows_pair_motion_with_rate(self):
        m = NormalizedMotion(0.2, -0.4, 0.1, 0.0)
        hist = MotionHistory((m,), (2,))
        row = history_input(hist)[0]
        assert row.tolist() == [0.2, -0.4, 0.1, 0.0, 0.1, -0.2, 0.05, 0.0]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        w = init_weights(seed=61, **SMALL)
        path = tmp_path / "w.json"
        save_weights(w, path)
        back = load_weights(path)
        assert (back.k, back.n_heads, back.c_enc, back.c_dec) == (3, 2, 8, 6)
        for name, arr in w.params().items():
            assert np.array_equal(arr, back.params()[name])

    def test_same_weights_same_bytes(self, tmp_path):
        w = init_weights(seed=62, **SMALL)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_weights(w, a)
        save_weights(w.copy(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_version_rejected(self, tmp_path):
        w = init_weights(seed=63, **SMALL)
        path = tmp_path / "w.json"
        save_weights(w, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            load_weights(path)

    def test_extra_keys_tolerated(self, tmp_path):
        w = init_weights(seed=64, **SMALL)
        path = tmp_path / "w.json"
        save_weights(w, path)
        doc = json.loads(path.read_text())
        doc["note"] = "extra"
        path.write_text(json.dumps(doc))
        load_weights(path)

    def test_missing_layer_rejected(self, tmp_path):
        w = init_weights(seed=65, **SMALL)
        path = tmp_path / "w.json"
        save_weights(w, path)
        doc = json.loads(path.read_text())
        del doc["layers"]["enc_fc.weight"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            load_weights(path)
