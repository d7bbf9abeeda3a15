"""Inference for the fixed desk-scale convolutional score network.

DeskScoreNet-v1, implemented identically by the trainer that produces the
weights and by this module, which only runs the forward pass:

* time conditioning: Gaussian Fourier features of log(sigma) with 64 fixed
  frequencies (stored in the weight file), proj = 2*pi*log(sigma)*freqs,
  embedding [sin(proj), cos(proj)] -> two SiLU dense layers 128 -> 128;
* encoder blocks at widths 16/32/64 with 2x average pooling between levels,
  a width-64 bottleneck, and a mirrored decoder with 2x nearest-neighbor
  upsampling and additive skips through 1x1 channel-matching convolutions;
* every block is conv3x3 -> +per-channel embedding bias -> SiLU -> conv3x3
  -> SiLU with zero padding;
* 1x1 output head, and the result is divided by sigma (the network itself
  predicts sigma * score).

Weights travel in the "SDW1" container: magic, u32 version = 1, u32 tensor
count, then per tensor u16 name length, UTF-8 name, u8 ndim, ndim x u32
dims, row-major little-endian float32 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ValidationError

__all__ = [
    "WeightsFormatError",
    "WeightsBadMagicError",
    "MissingTensorError",
    "ShapeMismatchError",
    "ScoreNetWeights",
    "expected_tensor_shapes",
    "load_weights",
    "save_weights",
    "DeskScoreNet",
]

EMBED_DIM = 128
NUM_FREQS = 64
WIDTHS = (16, 32, 64)


class WeightsFormatError(IOError):
    """Base class for SDW1 weight-file errors."""


class WeightsBadMagicError(WeightsFormatError):
    pass


class MissingTensorError(WeightsFormatError):
    pass


class ShapeMismatchError(WeightsFormatError):
    pass


def _block_shapes(name: str, cin: int, cout: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{name}.conv1.weight": (cout, cin, 3, 3),
        f"{name}.conv1.bias": (cout,),
        f"{name}.embed.weight": (cout, EMBED_DIM),
        f"{name}.embed.bias": (cout,),
        f"{name}.conv2.weight": (cout, cout, 3, 3),
        f"{name}.conv2.bias": (cout,),
    }


def expected_tensor_shapes() -> dict[str, tuple[int, ...]]:
    """Architecture descriptor: every named tensor and its shape."""
    w1, w2, w3 = WIDTHS
    shapes: dict[str, tuple[int, ...]] = {
        "time.freqs": (NUM_FREQS,),
        "time.fc1.weight": (EMBED_DIM, EMBED_DIM),
        "time.fc1.bias": (EMBED_DIM,),
        "time.fc2.weight": (EMBED_DIM, EMBED_DIM),
        "time.fc2.bias": (EMBED_DIM,),
    }
    shapes.update(_block_shapes("enc1", 1, w1))
    shapes.update(_block_shapes("enc2", w1, w2))
    shapes.update(_block_shapes("enc3", w2, w3))
    shapes.update(_block_shapes("mid", w3, w3))
    shapes.update(_block_shapes("dec3", w3, w3))
    shapes.update(_block_shapes("dec2", w3, w2))
    shapes.update(_block_shapes("dec1", w2, w1))
    shapes.update({
        "skip3.weight": (w3, w3, 1, 1),
        "skip3.bias": (w3,),
        "skip2.weight": (w3, w2, 1, 1),
        "skip2.bias": (w3,),
        "skip1.weight": (w2, w1, 1, 1),
        "skip1.bias": (w2,),
        "head.weight": (1, w1, 1, 1),
        "head.bias": (1,),
    })
    return shapes


@dataclass(frozen=True)
class ScoreNetWeights:
    """Validated named float32 tensors for DeskScoreNet-v1."""

    tensors: dict

    def __post_init__(self):
        expected = expected_tensor_shapes()
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise MissingTensorError(f"weight set is missing tensors: {missing}")
        unknown = sorted(set(self.tensors) - set(expected))
        if unknown:
            raise WeightsFormatError(f"weight set has unknown tensors: {unknown}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name], dtype=np.float32)
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name}: expected shape {shape}, got {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)


_MAGIC = b"SDW1"
_VERSION = 1


def save_weights(path, weights: ScoreNetWeights) -> None:
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(weights.tensors))]
    for name in sorted(weights.tensors):
        arr = weights.tensors[name]
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> ScoreNetWeights:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise WeightsBadMagicError(f"{path}: not an SDW1 file")
    if len(blob) < 12:
        raise WeightsFormatError(f"{path}: header truncated")
    version, count = struct.unpack("<II", blob[4:12])
    if version != _VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    offset = 12
    tensors = {}
    for _ in range(count):
        if offset + 2 > len(blob):
            raise WeightsFormatError(f"{path}: truncated tensor record")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 1 > len(blob):
            raise WeightsFormatError(f"{path}: truncated tensor record for {name}")
        ndim = blob[offset]
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        end = offset + 4 * n
        if end > len(blob):
            raise WeightsFormatError(f"{path}: truncated payload for {name}")
        tensors[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(dims)
        offset = end
    return ScoreNetWeights(tensors)


def _silu(t: np.ndarray) -> np.ndarray:
    return t / (1.0 + np.exp(-t))


def _conv3x3(u: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    padded = np.pad(u, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    out = np.einsum("bchwij,kcij->bkhw", windows, kernel, optimize=True)
    return out + bias[None, :, None, None]


def _conv1x1(u: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    out = np.einsum("bchw,kc->bkhw", u, kernel[:, :, 0, 0], optimize=True)
    return out + bias[None, :, None, None]


def _avgpool2(u: np.ndarray) -> np.ndarray:
    b, c, h, w = u.shape
    return u.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _upsample2(u: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(u, 2, axis=2), 2, axis=3)


class DeskScoreNet:
    """Forward pass of DeskScoreNet-v1; a ScoreFunction over crop images."""

    def __init__(self, weights: ScoreNetWeights):
        self.weights = weights

    def _embedding(self, sigma: float) -> np.ndarray:
        t = self.weights.tensors
        proj = 2.0 * np.pi * np.log(float(sigma)) * t["time.freqs"].astype(np.float64)
        e = np.concatenate([np.sin(proj), np.cos(proj)])
        e = _silu(t["time.fc1.weight"] @ e + t["time.fc1.bias"])
        e = _silu(t["time.fc2.weight"] @ e + t["time.fc2.bias"])
        return e

    def _block(self, name: str, u: np.ndarray, emb: np.ndarray) -> np.ndarray:
        t = self.weights.tensors
        h = _conv3x3(u, t[f"{name}.conv1.weight"], t[f"{name}.conv1.bias"])
        h = h + (t[f"{name}.embed.weight"] @ emb + t[f"{name}.embed.bias"])[None, :, None, None]
        h = _silu(h)
        h = _conv3x3(h, t[f"{name}.conv2.weight"], t[f"{name}.conv2.bias"])
        return _silu(h)

    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if sigma <= 0:
            raise ValidationError("sigma must be positive")
        squeeze = x.ndim == 2
        batch = x[None] if squeeze else x.reshape(-1, *x.shape[-2:])
        h, w = batch.shape[-2:]
        if h % 8 or w % 8:
            raise ValidationError(f"crop size {h}x{w} must be divisible by 8")

        t = self.weights.tensors
        emb = self._embedding(sigma)
        u = batch[:, None, :, :]
        e1 = self._block("enc1", u, emb)
        e2 = self._block("enc2", _avgpool2(e1), emb)
        e3 = self._block("enc3", _avgpool2(e2), emb)
        m = self._block("mid", _avgpool2(e3), emb)
        d3 = self._block("dec3", _upsample2(m) + _conv1x1(e3, t["skip3.weight"], t["skip3.bias"]), emb)
        d2 = self._block("dec2", _upsample2(d3) + _conv1x1(e2, t["skip2.weight"], t["skip2.bias"]), emb)
        d1 = self._block("dec1", _upsample2(d2) + _conv1x1(e1, t["skip1.weight"], t["skip1.bias"]), emb)
        out = _conv1x1(d1, t["head.weight"], t["head.bias"])[:, 0] / float(sigma)
        return out[0] if squeeze else out.reshape(x.shape)
