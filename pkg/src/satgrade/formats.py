"""Binary file formats and PNG IO.

All binary formats are little-endian and store samples as float32.

SGK1 (kernel)
    ``b"SGK1"``, u16 version, u32 height, u32 width, height*width float32
    row-major.  A noise-model file is an SGK1 kernel followed by one
    float64 standard deviation.
SGP1 (training pair)
    ``b"SGP1"``, u16 version, u16 channels, u32 hr_h, hr_w, lr_h, lr_w,
    u32 recipe_len, recipe JSON bytes, then LR and HR planes
    (channel-planar, row-major).
SGM1 (model)
    ``b"SGM1"``, u16 version, u32 num_blocks, num_filters, kernel_size, then
    every tensor in :func:`satgrade.srnet.param_names` order, weights laid out
    (out, in, row, col).
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

from .errors import CorruptFile, InvalidArgument
from .noise import NoiseModel

VERSION = 1

_KERNEL_HEAD = struct.Struct("<4sHII")
_PAIR_HEAD = struct.Struct("<4sHHIIIII")
_MODEL_HEAD = struct.Struct("<4sHIII")
_F32 = np.dtype("<f4")


def _unpack_head(fmt, data, magic, what):
    if len(data) < fmt.size:
        raise CorruptFile(f"{what}: file is shorter than its header")
    fields = fmt.unpack_from(data)
    if fields[0] != magic:
        raise CorruptFile(f"{what}: bad magic {fields[0]!r}")
    if fields[1] != VERSION:
        raise CorruptFile(f"{what}: unsupported version {fields[1]}")
    return fields[2:]


def _read_bytes(path_or_bytes):
    if isinstance(path_or_bytes, (bytes, bytearray, memoryview)):
        return bytes(path_or_bytes)
    return Path(path_or_bytes).read_bytes()


# ---------------------------------------------------------------------------
# kernels and noise models
# ---------------------------------------------------------------------------


def encode_kernel(kernel) -> bytes:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise InvalidArgument(f"kernel must be 2-D, got shape {k.shape}")
    return _KERNEL_HEAD.pack(b"SGK1", VERSION, k.shape[0], k.shape[1]) + k.astype(_F32).tobytes()


def decode_kernel(data: bytes, trailing: int = 0) -> np.ndarray:
    h, w = _unpack_head(_KERNEL_HEAD, data, b"SGK1", "kernel")
    expected = _KERNEL_HEAD.size + 4 * h * w + trailing
    if len(data) != expected:
        raise CorruptFile(f"kernel: expected {expected} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype=_F32, count=h * w, offset=_KERNEL_HEAD.size)
    return body.reshape(h, w).astype(np.float64)


def write_kernel(path, kernel):
    Path(path).write_bytes(encode_kernel(kernel))


def read_kernel(path) -> np.ndarray:
    return decode_kernel(_read_bytes(path))


def encode_noise_model(model: NoiseModel) -> bytes:
    return encode_kernel(model.kernel) + struct.pack("<d", model.std)


def decode_noise_model(data: bytes) -> NoiseModel:
    k = decode_kernel(data, trailing=8)
    (std,) = struct.unpack_from("<d", data, len(data) - 8)
    # float32 storage perturbs the unit norm slightly
    return NoiseModel(k / np.linalg.norm(k), std)


def write_noise_model(path, model: NoiseModel):
    Path(path).write_bytes(encode_noise_model(model))


def read_noise_model(path) -> NoiseModel:
    return decode_noise_model(_read_bytes(path))


# ---------------------------------------------------------------------------
# training pairs
# ---------------------------------------------------------------------------


def _planar(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(_F32)


def encode_pair(lr, hr, recipe_json: bytes) -> bytes:
    lr_p, hr_p = _planar(lr), _planar(hr)
    if lr_p.shape[0] != hr_p.shape[0]:
        raise InvalidArgument("LR and HR images must have the same channel count")
    c, hr_h, hr_w = hr_p.shape
    _, lr_h, lr_w = lr_p.shape
    head = _PAIR_HEAD.pack(b"SGP1", VERSION, c, hr_h, hr_w, lr_h, lr_w, len(recipe_json))
    return head + recipe_json + lr_p.tobytes() + hr_p.tobytes()


def decode_pair(data: bytes):
    """Return ``(lr, hr, recipe_json_bytes)``; images are HWC float64."""
    c, hr_h, hr_w, lr_h, lr_w, rlen = _unpack_head(_PAIR_HEAD, data, b"SGP1", "pair")
    expected = _PAIR_HEAD.size + rlen + 4 * c * (hr_h * hr_w + lr_h * lr_w)
    if len(data) != expected:
        raise CorruptFile(f"pair: expected {expected} bytes from header, found {len(data)}")
    off = _PAIR_HEAD.size
    recipe = data[off : off + rlen]
    off += rlen
    lr = np.frombuffer(data, _F32, c * lr_h * lr_w, off).reshape(c, lr_h, lr_w)
    off += 4 * c * lr_h * lr_w
    hr = np.frombuffer(data, _F32, c * hr_h * hr_w, off).reshape(c, hr_h, hr_w)
    return lr.transpose(1, 2, 0).astype(np.float64), hr.transpose(1, 2, 0).astype(np.float64), recipe


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def encode_model(model) -> bytes:
    from .srnet import param_names

    parts = [_MODEL_HEAD.pack(b"SGM1", VERSION, model.num_blocks, model.num_filters, model.kernel_size)]
    for name in param_names(model.num_blocks):
        parts.append(np.ascontiguousarray(model.params[name]).astype(_F32).tobytes())
    return b"".join(parts)


def decode_model(data: bytes):
    from .srnet import SrModel, param_names, param_shapes

    nb, nf, ks = _unpack_head(_MODEL_HEAD, data, b"SGM1", "model")
    shapes = param_shapes(nb, nf, ks)
    expected = _MODEL_HEAD.size + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != expected:
        raise CorruptFile(f"model: expected {expected} bytes from header, found {len(data)}")
    params = {}
    off = _MODEL_HEAD.size
    for name in param_names(nb):
        n = int(np.prod(shapes[name]))
        params[name] = np.frombuffer(data, _F32, n, off).reshape(shapes[name]).copy()
        off += 4 * n
    return SrModel(nb, nf, ks, params)


def write_model(path, model):
    Path(path).write_bytes(encode_model(model))


def read_model(path):
    return decode_model(_read_bytes(path))


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def srgb_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def read_png(path, srgb_decode=False) -> np.ndarray:
    """Read an 8- or 16-bit PNG as float64 in [0, 1] (HW or HWC RGB)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InvalidArgument(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise InvalidArgument(f"unsupported sample type {raw.dtype} in {path}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[..., :3]
        img = img[..., ::-1].copy()
    return srgb_to_linear(img) if srgb_decode else img


def write_png(path, image, bits=16):
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        q = np.round(img * 65535.0).astype(np.uint16)
    elif bits == 8:
        q = np.round(img * 255.0).astype(np.uint8)
    else:
        raise InvalidArgument(f"bit depth must be 8 or 16, got {bits}")
    if q.ndim == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), q):
        raise InvalidArgument(f"cannot write image {path}")
