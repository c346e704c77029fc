"""SDM encoder: a NumPy network predicting the SDM from audio and history.

Three input paths are concatenated and fed to an MLP:

- audio: 2D CNN over the 2×257×69 spectrogram (kernels 8/4/3, strides 4/2/2,
  channels 32/64/32, ReLU) and a linear layer to a 512-dim ReLU embedding;
- previous action: the 4-dim one-hot vector, passed through unchanged;
- ring: four circularly padded 1D convolutions (kernel 3, 32 channels, ReLU)
  over the 8 previous SDM nodes, flattened to 256 features.

The 772-dim concatenation goes through layers of 1048, 1048, 524 and 8
units, ReLU on hidden layers and a sigmoid on the output. Gradients are
computed by hand-written reverse-mode differentiation in float64.
"""

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from sdmnav.audio import N_BINS, N_FRAMES, SPECTROGRAM_SHAPE
from sdmnav.errors import SdmError
from sdmnav.sdm import N_NODES

logger = logging.getLogger(__name__)

N_ACTIONS = 4
# (in channels, out channels, kernel, stride)
AUDIO_CONV = ((2, 32, 8, 4), (32, 64, 4, 2), (64, 32, 3, 2))
AUDIO_EMBEDDING = 512
RING_CHANNELS = 32
RING_LAYERS = 4
RING_KERNEL = 3
MLP_SIZES = (1048, 1048, 524, N_NODES)
MSE_COEFFICIENT = 100.0

PARAMS_FORMAT = "sdmnav-encoder-params"


def conv_output_size(n: int, kernel: int, stride: int) -> int:
    return (n - kernel) // stride + 1


def audio_feature_shape() -> tuple[int, int, int]:
    """Shape ``(C, H, W)`` of the last audio convolution's output."""
    h, w = N_BINS, N_FRAMES
    for _, _, k, s in AUDIO_CONV:
        h, w = conv_output_size(h, k, s), conv_output_size(w, k, s)
    return AUDIO_CONV[-1][1], h, w


def mlp_input_size() -> int:
    return AUDIO_EMBEDDING + N_ACTIONS + RING_CHANNELS * N_NODES


def param_shapes() -> dict[str, tuple[int, ...]]:
    """Declared parameter tensors, in file order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for n, (c_in, c_out, k, _) in enumerate(AUDIO_CONV, start=1):
        shapes[f"audio.conv{n}.weight"] = (c_out, c_in, k, k)
        shapes[f"audio.conv{n}.bias"] = (c_out,)
    shapes["audio.fc.weight"] = (AUDIO_EMBEDDING, int(np.prod(audio_feature_shape())))
    shapes["audio.fc.bias"] = (AUDIO_EMBEDDING,)
    for n in range(1, RING_LAYERS + 1):
        c_in = 1 if n == 1 else RING_CHANNELS
        shapes[f"ring.conv{n}.weight"] = (RING_CHANNELS, c_in, RING_KERNEL)
        shapes[f"ring.conv{n}.bias"] = (RING_CHANNELS,)
    fan_in = mlp_input_size()
    for n, size in enumerate(MLP_SIZES, start=1):
        shapes[f"mlp.fc{n}.weight"] = (size, fan_in)
        shapes[f"mlp.fc{n}.bias"] = (size,)
        fan_in = size
    return shapes


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class EncoderParams:
    """Named float64 parameter tensors of the encoder (mutable, owned by one trainer)."""
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = param_shapes()
        if list(self.tensors) != list(expected):
            raise SdmError(f"parameter names {list(self.tensors)} do not match the encoder layout")
        for name, shape in expected.items():
            arr = np.ascontiguousarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise SdmError(f"parameter '{name}' has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise SdmError(f"parameter '{name}' contains non-finite values")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def allclose(self, other: "EncoderParams", **kwargs) -> bool:
        return all(np.allclose(self[k], other[k], **kwargs) for k in self.tensors)


def init_params(rng: np.random.Generator) -> EncoderParams:
    """He-normal weights, zero biases; the output layer uses a LeCun-normal scale."""
    tensors = {}
    for name, shape in param_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        gain = 1.0 if name == f"mlp.fc{len(MLP_SIZES)}.weight" else 2.0
        tensors[name] = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
    return EncoderParams(tensors)


def params_to_bytes(params: EncoderParams) -> bytes:
    """JSON manifest line followed by little-endian float64 arrays in declared order."""
    manifest = {
        "format": PARAMS_FORMAT,
        "dtype": "<f8",
        "layers": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    blobs = [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.tensors.values()]
    return (json.dumps(manifest) + "\n").encode("utf-8") + b"".join(blobs)


def params_from_bytes(data: bytes) -> EncoderParams:
    """Inverse of :func:`params_to_bytes`."""
    newline = data.find(b"\n")
    if newline < 0:
        raise SdmError("parameter file has no manifest line")
    try:
        manifest = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SdmError(f"malformed parameter manifest: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != PARAMS_FORMAT or manifest.get("dtype") != "<f8":
        raise SdmError("not an sdmnav encoder parameter file")

    tensors = {}
    offset = newline + 1
    try:
        layers = [(str(layer["name"]), tuple(int(n) for n in layer["shape"])) for layer in manifest["layers"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SdmError(f"malformed parameter manifest layer: {exc}") from exc
    for name, shape in layers:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise SdmError(f"parameter file truncated in layer '{name}'")
        tensors[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise SdmError("trailing bytes after the last parameter tensor")
    return EncoderParams(tensors)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _windows2d(x: np.ndarray, k: int, s: int) -> np.ndarray:
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, s: int) -> np.ndarray:
    win = _windows2d(x, w.shape[2], s)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def _conv2d_backward(x, w, s, dout, need_dx=True):
    k = w.shape[2]
    win = _windows2d(x, k, s)
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    if not need_dx:
        return None, dw, db
    ho, wo = dout.shape[2:]
    dcols = np.tensordot(dout, w, axes=([1], [0]))
    dx = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dx, dw, db


def _circular_windows(x: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    padded = np.concatenate([x[..., -pad:], x, x[..., :pad]], axis=-1)
    return sliding_window_view(padded, k, axis=2)


def _conv1d_circular(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    win = _circular_windows(x, w.shape[2])
    out = np.tensordot(win, w, axes=([1, 3], [1, 2]))
    return out.transpose(0, 2, 1) + b[None, :, None]


def _conv1d_circular_backward(x, w, dout):
    k = w.shape[2]
    pad = k // 2
    length = x.shape[2]
    win = _circular_windows(x, k)
    dw = np.tensordot(dout, win, axes=([0, 2], [0, 2]))
    db = dout.sum(axis=(0, 2))
    dcols = np.tensordot(dout, w, axes=([1], [0]))
    dpadded = np.zeros(x.shape[:2] + (length + 2 * pad,))
    for t in range(k):
        dpadded[:, :, t:t + length] += dcols[:, :, :, t].transpose(0, 2, 1)
    dx = dpadded[..., pad:pad + length].copy()
    dx[..., :pad] += dpadded[..., length + pad:]
    dx[..., length - pad:] += dpadded[..., :pad]
    return dx, dw, db


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _as_batch(spectrogram, prev_action, prev_sdm):
    spec = np.asarray(spectrogram, dtype=np.float64)
    act = np.asarray(prev_action, dtype=np.float64)
    prev = np.asarray(prev_sdm, dtype=np.float64)
    single = spec.ndim == 3
    if single:
        spec, act, prev = spec[None], act[None], prev[None]
    if spec.shape[1:] != SPECTROGRAM_SHAPE:
        raise SdmError(f"spectrogram shape {spec.shape[1:]} != {SPECTROGRAM_SHAPE}")
    if act.shape != (spec.shape[0], N_ACTIONS):
        raise SdmError(f"previous action shape {act.shape} != {(spec.shape[0], N_ACTIONS)}")
    if prev.shape != (spec.shape[0], N_NODES):
        raise SdmError(f"previous SDM shape {prev.shape} != {(spec.shape[0], N_NODES)}")
    return spec, act, prev, single


def _ring_forward(params: EncoderParams, prev: np.ndarray, cache: Optional[list] = None) -> np.ndarray:
    r = prev[:, None, :]
    for n in range(1, RING_LAYERS + 1):
        z = _conv1d_circular(r, params[f"ring.conv{n}.weight"], params[f"ring.conv{n}.bias"])
        if cache is not None:
            cache.append((r, z))
        r = _relu(z)
    return r


def _forward(params: EncoderParams, spec: np.ndarray, act: np.ndarray, prev: np.ndarray):
    batch = spec.shape[0]
    cache: dict[str, list] = {"audio": [], "ring": [], "mlp": []}

    x = spec
    for n, (_, _, _, s) in enumerate(AUDIO_CONV, start=1):
        z = _conv2d(x, params[f"audio.conv{n}.weight"], params[f"audio.conv{n}.bias"], s)
        cache["audio"].append((x, z))
        x = _relu(z)
    flat = x.reshape(batch, -1)
    z = flat @ params["audio.fc.weight"].T + params["audio.fc.bias"]
    cache["audio_fc"] = (flat, z)
    audio = _relu(z)

    ring = _ring_forward(params, prev, cache["ring"]).reshape(batch, -1)

    h = np.concatenate([audio, act, ring], axis=1)
    for n in range(1, len(MLP_SIZES) + 1):
        z = h @ params[f"mlp.fc{n}.weight"].T + params[f"mlp.fc{n}.bias"]
        cache["mlp"].append((h, z))
        h = _relu(z) if n < len(MLP_SIZES) else expit(z)
    if not np.isfinite(h).all():
        raise SdmError("non-finite encoder output")
    return h, cache


def _backward(params: EncoderParams, cache: dict, dpred: np.ndarray) -> EncoderParams:
    grads: dict[str, np.ndarray] = {}
    batch = dpred.shape[0]

    n_mlp = len(MLP_SIZES)
    h_out = expit(cache["mlp"][-1][1])
    dz = dpred * h_out * (1.0 - h_out)
    for n in range(n_mlp, 0, -1):
        h_in, _ = cache["mlp"][n - 1]
        grads[f"mlp.fc{n}.weight"] = dz.T @ h_in
        grads[f"mlp.fc{n}.bias"] = dz.sum(axis=0)
        dh = dz @ params[f"mlp.fc{n}.weight"]
        if n > 1:
            dz = dh * (cache["mlp"][n - 2][1] > 0)

    d_audio = dh[:, :AUDIO_EMBEDDING]
    d_ring = dh[:, AUDIO_EMBEDDING + N_ACTIONS:].reshape(batch, RING_CHANNELS, N_NODES)

    for n in range(RING_LAYERS, 0, -1):
        r_in, z = cache["ring"][n - 1]
        dz_ring = d_ring * (z > 0)
        d_ring, dw, db = _conv1d_circular_backward(r_in, params[f"ring.conv{n}.weight"], dz_ring)
        grads[f"ring.conv{n}.weight"] = dw
        grads[f"ring.conv{n}.bias"] = db

    flat, z = cache["audio_fc"]
    dz = d_audio * (z > 0)
    grads["audio.fc.weight"] = dz.T @ flat
    grads["audio.fc.bias"] = dz.sum(axis=0)
    dx = (dz @ params["audio.fc.weight"]).reshape(cache["audio"][-1][1].shape)

    for n in range(len(AUDIO_CONV), 0, -1):
        x_in, z = cache["audio"][n - 1]
        dz = dx * (z > 0)
        s = AUDIO_CONV[n - 1][3]
        dx, dw, db = _conv2d_backward(x_in, params[f"audio.conv{n}.weight"], s, dz, need_dx=n > 1)
        grads[f"audio.conv{n}.weight"] = dw
        grads[f"audio.conv{n}.bias"] = db

    return EncoderParams({name: grads[name] for name in param_shapes()})


def encoder_forward(params: EncoderParams, spectrogram, prev_action, prev_sdm) -> np.ndarray:
    """Predict the SDM; accepts one sample or a leading batch axis.

    Returns:
        Shape ``(8,)`` (or ``(B, 8)``) with every entry strictly inside (0, 1).
    """
    spec, act, prev, single = _as_batch(spectrogram, prev_action, prev_sdm)
    pred, _ = _forward(params, spec, act, prev)
    return pred[0] if single else pred


def ring_features(params: EncoderParams, prev_sdm) -> np.ndarray:
    """Ring-path feature map ``(B, 32, 8)`` for a batch of previous SDMs."""
    prev = np.atleast_2d(np.asarray(prev_sdm, dtype=np.float64))
    return _ring_forward(params, prev)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SdmSample:
    """Teacher-forced training tuple (A_t, a_{t-1}, d_{t-1}, d_t)."""
    spectrogram: np.ndarray
    prev_action: np.ndarray
    prev_sdm: np.ndarray
    target: np.ndarray


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """``100 · mean((pred − target)²)`` over batch and nodes."""
    return float(MSE_COEFFICIENT * np.mean((np.asarray(pred) - np.asarray(target)) ** 2))


def batch_loss_and_gradient(
    params: EncoderParams,
    spectrogram: np.ndarray,
    prev_action: np.ndarray,
    prev_sdm: np.ndarray,
    target: np.ndarray,
) -> tuple[float, EncoderParams]:
    """Loss and gradient for stacked batch arrays."""
    spec, act, prev, _ = _as_batch(spectrogram, prev_action, prev_sdm)
    target = np.asarray(target, dtype=np.float64).reshape(spec.shape[0], N_NODES)
    if spec.shape[0] == 0:
        raise SdmError("empty batch")
    pred, cache = _forward(params, spec, act, prev)
    diff = pred - target
    loss = float(MSE_COEFFICIENT * np.mean(diff ** 2))
    dpred = MSE_COEFFICIENT * 2.0 * diff / diff.size
    return loss, _backward(params, cache, dpred)


def loss_and_gradient(params: EncoderParams, batch: Sequence[SdmSample]) -> tuple[float, EncoderParams]:
    """MSE loss (coefficient 100) and its exact gradient over a batch of samples."""
    if not batch:
        raise SdmError("empty batch")
    return batch_loss_and_gradient(
        params,
        np.stack([s.spectrogram for s in batch]),
        np.stack([s.prev_action for s in batch]),
        np.stack([s.prev_sdm for s in batch]),
        np.stack([s.target for s in batch]),
    )


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def random_batch(rng: np.random.Generator, size: int = 2) -> list[SdmSample]:
    """Random but well-formed samples for gradient checking."""
    samples = []
    for _ in range(size):
        action = np.zeros(N_ACTIONS)
        action[rng.integers(N_ACTIONS)] = 1.0
        samples.append(SdmSample(
            spectrogram=rng.uniform(0.0, 3.0, SPECTROGRAM_SHAPE),
            prev_action=action,
            prev_sdm=rng.uniform(0.0, 1.0, N_NODES),
            target=rng.uniform(0.0, 1.0, N_NODES),
        ))
    return samples


def gradient_check(
    params: EncoderParams,
    batch: Sequence[SdmSample],
    rng: np.random.Generator,
    n_coords: int = 5,
    eps: float = 1e-6,
) -> dict[str, float]:
    """Compare backprop against central differences on sampled coordinates.

    For every tensor, *n_coords* random entries plus the entry with the
    largest analytic gradient are perturbed by ±eps. The error reported per
    tensor is ``‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)`` over those entries (0 when
    both vanish).

    Returns:
        Mapping of parameter name to relative error.
    """
    _, grads = loss_and_gradient(params, batch)
    shifted = params.copy()
    errors = {}
    for name, tensor in shifted.tensors.items():
        flat = tensor.reshape(-1)
        g_flat = grads[name].reshape(-1)
        idx = set(int(i) for i in rng.integers(flat.size, size=n_coords))
        idx.add(int(np.argmax(np.abs(g_flat))))
        analytic, numeric = [], []
        for i in sorted(idx):
            old = flat[i]
            flat[i] = old + eps
            loss_plus, _ = _loss_only(shifted, batch)
            flat[i] = old - eps
            loss_minus, _ = _loss_only(shifted, batch)
            flat[i] = old
            analytic.append(g_flat[i])
            numeric.append((loss_plus - loss_minus) / (2.0 * eps))
        analytic = np.array(analytic)
        numeric = np.array(numeric)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        errors[name] = 0.0 if scale < 1e-300 else float(np.linalg.norm(analytic - numeric) / scale)
    return errors


def _loss_only(params: EncoderParams, batch: Sequence[SdmSample]) -> tuple[float, np.ndarray]:
    pred = encoder_forward(
        params,
        np.stack([s.spectrogram for s in batch]),
        np.stack([s.prev_action for s in batch]),
        np.stack([s.prev_sdm for s in batch]),
    )
    return mse_loss(pred, np.stack([s.target for s in batch])), pred
