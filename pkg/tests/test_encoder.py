"""Tests for encoder.py (layout, forward pass, loss, hand-written gradients)."""

import json

import numpy as np
import pytest

from sdmnav.audio import SPECTROGRAM_SHAPE
from sdmnav.encoder import (
    EncoderParams,
    SdmSample,
    audio_feature_shape,
    encoder_forward,
    gradient_check,
    init_params,
    loss_and_gradient,
    mlp_input_size,
    mse_loss,
    param_shapes,
    params_from_bytes,
    params_to_bytes,
    random_batch,
    ring_features,
)
from sdmnav.errors import SdmError


@pytest.fixture(scope="module")
def params():
    return init_params(np.random.default_rng(0))


def direct_ring(params, prev):
    """Loop-based circular convolutions used as an oracle for the ring path."""
    r = np.asarray(prev, dtype=np.float64)[None, :]
    for n in range(1, 5):
        w, b = params[f"ring.conv{n}.weight"], params[f"ring.conv{n}.bias"]
        out = np.zeros((w.shape[0], 8))
        for o in range(w.shape[0]):
            for t in range(8):
                acc = b[o]
                for c in range(w.shape[1]):
                    for k in range(3):
                        acc += w[o, c, k] * r[c, (t + k - 1) % 8]
                out[o, t] = acc
        r = np.maximum(out, 0.0)
    return r


class TestLayout:
    def test_mlp_input(self):
        assert mlp_input_size() == 772

    def test_audio_features(self):
        assert audio_feature_shape() == (32, 14, 3)

    def test_mlp_shapes(self):
        shapes = param_shapes()
        assert shapes["mlp.fc1.weight"] == (1048, 772)
        assert shapes["mlp.fc2.weight"] == (1048, 1048)
        assert shapes["mlp.fc3.weight"] == (524, 1048)
        assert shapes["mlp.fc4.weight"] == (8, 524)
        assert shapes["ring.conv1.weight"] == (32, 1, 3)
        assert shapes["ring.conv4.weight"] == (32, 32, 3)

    def test_init_biases_are_zero(self, params):
        assert all(not params[name].any() for name in param_shapes() if name.endswith(".bias"))

    def test_init_is_seeded(self):
        a = init_params(np.random.default_rng(5))
        b = init_params(np.random.default_rng(5))
        assert a.allclose(b, rtol=0, atol=0)

    def test_wrong_shape_rejected(self, params):
        tensors = dict(params.copy().tensors)
        tensors["mlp.fc4.bias"] = np.zeros(7)
        with pytest.raises(SdmError, match="mlp.fc4.bias"):
            EncoderParams(tensors)

    def test_non_finite_rejected(self, params):
        tensors = dict(params.copy().tensors)
        tensors["audio.fc.bias"] = np.full(512, np.inf)
        with pytest.raises(SdmError, match="non-finite"):
            EncoderParams(tensors)


class TestParamsFile:
    def test_round_trip(self, params):
        again = params_from_bytes(params_to_bytes(params))
        assert again.allclose(params, rtol=0, atol=0)

    def test_manifest(self, params):
        data = params_to_bytes(params)
        manifest = json.loads(data[: data.index(b"\n")])
        assert manifest["dtype"] == "<f8"
        assert [layer["name"] for layer in manifest["layers"]] == list(param_shapes())

    def test_truncated(self, params):
        with pytest.raises(SdmError, match="truncated"):
            params_from_bytes(params_to_bytes(params)[:-8])

    def test_trailing_bytes(self, params):
        with pytest.raises(SdmError, match="trailing"):
            params_from_bytes(params_to_bytes(params) + b"\x00")

    def test_not_a_params_file(self):
        with pytest.raises(SdmError):
            params_from_bytes(b'{"format": "other"}\n')
        with pytest.raises(SdmError, match="manifest"):
            params_from_bytes(b"no newline")

    def test_manifest_not_an_object(self):
        with pytest.raises(SdmError, match="not an sdmnav"):
            params_from_bytes(b"[1]\n")

    def test_mistyped_layer(self, params):
        data = params_to_bytes(params)
        newline = data.index(b"\n")
        manifest = json.loads(data[:newline])
        manifest["layers"][0]["shape"] = "wide"
        with pytest.raises(SdmError, match="manifest layer"):
            params_from_bytes(json.dumps(manifest).encode() + data[newline:])


class TestForward:
    def test_single_sample(self, params):
        rng = np.random.default_rng(1)
        pred = encoder_forward(params, rng.uniform(0, 3, SPECTROGRAM_SHAPE), np.eye(4)[1], np.zeros(8))
        assert pred.shape == (8,)
        assert ((pred > 0) & (pred < 1)).all()

    def test_batch_matches_single(self, params):
        batch = random_batch(np.random.default_rng(2), size=3)
        stacked = encoder_forward(
            params,
            np.stack([s.spectrogram for s in batch]),
            np.stack([s.prev_action for s in batch]),
            np.stack([s.prev_sdm for s in batch]),
        )
        assert stacked.shape == (3, 8)
        for row, s in zip(stacked, batch):
            assert np.allclose(row, encoder_forward(params, s.spectrogram, s.prev_action, s.prev_sdm))

    def test_deterministic(self, params):
        s = random_batch(np.random.default_rng(3), size=1)[0]
        a = encoder_forward(params, s.spectrogram, s.prev_action, s.prev_sdm)
        b = encoder_forward(params, s.spectrogram, s.prev_action, s.prev_sdm)
        assert np.array_equal(a, b)

    def test_bad_shapes(self, params):
        with pytest.raises(SdmError, match="spectrogram"):
            encoder_forward(params, np.zeros((2, 257, 68)), np.zeros(4), np.zeros(8))
        with pytest.raises(SdmError, match="action"):
            encoder_forward(params, np.zeros(SPECTROGRAM_SHAPE), np.zeros(3), np.zeros(8))
        with pytest.raises(SdmError, match="SDM"):
            encoder_forward(params, np.zeros(SPECTROGRAM_SHAPE), np.zeros(4), np.zeros(9))


class TestRingPath:
    def test_matches_direct_convolution(self, params):
        prev = np.random.default_rng(4).uniform(0, 1, 8)
        assert np.allclose(ring_features(params, prev)[0], direct_ring(params, prev))

    @pytest.mark.parametrize("shift", [1, 3, 7])
    def test_cyclic_equivariance(self, params, shift):
        prev = np.random.default_rng(shift).uniform(0, 1, 8)
        shifted = ring_features(params, np.roll(prev, shift))
        assert np.allclose(shifted, np.roll(ring_features(params, prev), shift, axis=-1))


class TestLoss:
    def test_formula(self):
        target = np.linspace(0.1, 0.8, 8)
        pred = target.copy()
        pred[3] += 0.1
        assert mse_loss(pred, target) == pytest.approx(0.125)

    def test_exact_prediction_has_zero_gradient(self, params):
        batch = random_batch(np.random.default_rng(5), size=2)
        preds = encoder_forward(
            params,
            np.stack([s.spectrogram for s in batch]),
            np.stack([s.prev_action for s in batch]),
            np.stack([s.prev_sdm for s in batch]),
        )
        exact = [SdmSample(s.spectrogram, s.prev_action, s.prev_sdm, p) for s, p in zip(batch, preds)]
        loss, grads = loss_and_gradient(params, exact)
        assert loss == 0.0
        assert all(not grads[name].any() for name in param_shapes())

    def test_gradient_layout(self, params):
        _, grads = loss_and_gradient(params, random_batch(np.random.default_rng(6), size=2))
        assert list(grads.tensors) == list(param_shapes())

    def test_empty_batch(self, params):
        with pytest.raises(SdmError, match="empty"):
            loss_and_gradient(params, [])


class TestGradientCheck:
    def test_backprop_matches_central_differences(self, params):
        rng = np.random.default_rng(7)
        errors = gradient_check(params, random_batch(rng, size=2), rng, n_coords=2)
        assert set(errors) == set(param_shapes())
        assert max(errors.values()) < 1e-4


@pytest.mark.slow
class TestGradientAcceptance:
    @pytest.mark.parametrize("seed", range(5))
    def test_five_seeds(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(rng)
        errors = gradient_check(params, random_batch(rng, size=2), rng, n_coords=5)
        assert max(errors.values()) < 1e-4
