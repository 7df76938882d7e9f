"""Small differentiable network stack.

Networks are described by a flat list of layer tuples and evaluated against a
:class:`ParamSet`. A forward pass records a :class:`Tape`; ``backward``
consumes it once and returns parameter gradients plus the input gradient.
"""

from __future__ import annotations

import io
import logging
import struct
from collections.abc import Mapping
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamSet(Mapping):
    """Ordered, read-only mapping of parameter name to array."""

    def __init__(self, tensors=()):
        items = tensors.items() if isinstance(tensors, Mapping) else tensors
        self._data = {}
        for name, arr in items:
            arr = np.array(arr, copy=True)
            arr.flags.writeable = False
            self._data[name] = arr

    @classmethod
    def _adopt(cls, tensors: dict) -> "ParamSet":
        """Wrap freshly computed arrays without copying them."""
        obj = cls.__new__(cls)
        obj._data = tensors
        for arr in tensors.values():
            arr.flags.writeable = False
        return obj

    def __getitem__(self, name):
        return self._data[name]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._data.items())
        return f"ParamSet({shapes})"

    @property
    def dtype(self):
        return next(iter(self._data.values())).dtype if self._data else np.dtype(np.float64)

    def shapes(self):
        return {k: v.shape for k, v in self._data.items()}

    def size(self) -> int:
        return sum(v.size for v in self._data.values())

    def flat(self) -> np.ndarray:
        if not self._data:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([v.ravel() for v in self._data.values()])

    def from_flat(self, vec) -> "ParamSet":
        vec = np.asarray(vec)
        out, offset = {}, 0
        for name, arr in self._data.items():
            out[name] = vec[offset:offset + arr.size].reshape(arr.shape).astype(arr.dtype)
            offset += arr.size
        if offset != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {offset}")
        return ParamSet(out)

    def map(self, fn) -> "ParamSet":
        return ParamSet({k: fn(v) for k, v in self._data.items()})

    def astype(self, dtype) -> "ParamSet":
        return self.map(lambda v: v.astype(dtype))

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._data.values())

    def equal(self, other: "ParamSet") -> bool:
        """Bitwise equality of names, dtypes, shapes and values."""
        if list(self) != list(other):
            return False
        return all(a.dtype == other[k].dtype and a.shape == other[k].shape
                   and a.tobytes() == other[k].tobytes() for k, a in self._data.items())


class TapeReuseError(RuntimeError):
    pass


class Tape:
    """Forward records for exactly one backward pass."""

    def __init__(self):
        self.records = []
        self.consumed = False

    def push(self, *record):
        self.records.append(record)


# -- layer descriptions -------------------------------------------------------
# ("linear", name, n_in, n_out) | ("conv", name, c_in, c_out, kernel, stride)
# ("relu",) | ("tanh",) | ("flatten",)


@dataclass(frozen=True)
class Network:
    layers: tuple
    input_shape: tuple

    def forward(self, params: ParamSet, x):
        return forward(self, params, x)

    def init(self, seed, dtype=np.float64, final="orthogonal", final_scale=3e-3):
        return init_params(self, seed, dtype=dtype, final=final, final_scale=final_scale)

    @property
    def output_dim(self) -> int:
        for layer in reversed(self.layers):
            if layer[0] == "linear":
                return layer[3]
        raise ValueError("network has no linear layer")


def mlp(sizes, output_activation=None, prefix="l") -> Network:
    """Affine layers with ReLU between them; optional tanh on the output."""
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least input and output sizes")
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(("linear", f"{prefix}{i}", n_in, n_out))
        if i < len(sizes) - 2:
            layers.append(("relu",))
    if output_activation == "tanh":
        layers.append(("tanh",))
    elif output_activation is not None:
        raise ValueError(f"unsupported output activation {output_activation!r}")
    return Network(tuple(layers), (sizes[0],))


def conv_encoder(obs_shape, features_dim=50, channels=32) -> Network:
    """Two 3x3 convolutions (stride 2 then 1), flatten, linear projection."""
    c, h, w = obs_shape
    h1, w1 = (h - 3) // 2 + 1, (w - 3) // 2 + 1
    h2, w2 = h1 - 2, w1 - 2
    if h2 < 1 or w2 < 1:
        raise ValueError(f"observation {obs_shape} too small for the encoder")
    layers = (
        ("conv", "conv0", c, channels, 3, 2), ("relu",),
        ("conv", "conv1", channels, channels, 3, 1), ("relu",),
        ("flatten",),
        ("linear", "proj", channels * h2 * w2, features_dim),
    )
    return Network(layers, tuple(obs_shape))


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(net: Network, seed, dtype=np.float64, final="orthogonal", final_scale=3e-3) -> ParamSet:
    """Orthogonal weights (gain sqrt(2) before a ReLU, 1 otherwise), zero biases.

    ``final="uniform"`` draws the last linear layer from U(-final_scale,
    final_scale) instead, which keeps initial actor outputs near zero.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    param_layers = [i for i, layer in enumerate(net.layers) if layer[0] in ("linear", "conv")]
    for i in param_layers:
        layer = net.layers[i]
        followed_by_relu = i + 1 < len(net.layers) and net.layers[i + 1][0] == "relu"
        gain = np.sqrt(2.0) if followed_by_relu else 1.0
        if layer[0] == "linear":
            _, name, n_in, n_out = layer
            if i == param_layers[-1] and final == "uniform":
                w = rng.uniform(-final_scale, final_scale, size=(n_in, n_out))
            else:
                w = _orthogonal(rng, n_in, n_out, gain)
            tensors[f"{name}.w"] = w
            tensors[f"{name}.b"] = np.zeros(n_out)
        else:
            _, name, c_in, c_out, k, _stride = layer
            w = _orthogonal(rng, c_out, c_in * k * k, gain).reshape(c_out, c_in, k, k)
            tensors[f"{name}.w"] = w
            tensors[f"{name}.b"] = np.zeros(c_out)
    return ParamSet({k: v.astype(dtype) for k, v in tensors.items()})


# -- forward / backward -------------------------------------------------------

def _im2col(x, k, stride):
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
    return cols, oh, ow


def forward(net: Network, params: ParamSet, x):
    """Evaluate ``net`` on a batch; returns (output, tape)."""
    dtype = params.dtype
    x = np.asarray(x, dtype=dtype)
    if x.shape[1:] != tuple(net.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match network input {net.input_shape}")
    tape = Tape()
    for layer in net.layers:
        kind = layer[0]
        if kind == "linear":
            name = layer[1]
            tape.push("linear", name, x)
            x = x @ params[f"{name}.w"]
            x += params[f"{name}.b"]
        elif kind == "relu":
            x = np.maximum(x, 0)
            tape.push("relu", x)
        elif kind == "tanh":
            x = np.tanh(x)
            tape.push("tanh", x)
        elif kind == "flatten":
            tape.push("flatten", x.shape)
            x = x.reshape(x.shape[0], -1)
        elif kind == "conv":
            _, name, c_in, c_out, k, stride = layer
            if x.shape[1] != c_in:
                raise ValueError(f"{name}: expected {c_in} channels, got {x.shape[1]}")
            if x.shape[2] < k or x.shape[3] < k:
                raise ValueError(f"{name}: image {x.shape[2:]} smaller than kernel {k}")
            cols, oh, ow = _im2col(x, k, stride)
            w = params[f"{name}.w"].reshape(c_out, -1)
            tape.push("conv", name, cols, x.shape, k, stride, oh, ow)
            y = cols @ w.T + params[f"{name}.b"]
            x = y.reshape(x.shape[0], oh, ow, c_out).transpose(0, 3, 1, 2)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return x, tape


def backward(tape: Tape, params: ParamSet, output_grad, param_grads=True):
    """Reverse-mode pass over ``tape``.

    Returns ``(grads, input_grad)``; ``grads`` is a dict keyed like
    ``params`` (empty when ``param_grads`` is False).
    """
    if tape.consumed:
        raise TapeReuseError("tape already consumed by a backward pass")
    tape.consumed = True
    g = np.asarray(output_grad, dtype=params.dtype)
    grads = {}
    for record in reversed(tape.records):
        kind = record[0]
        if kind == "linear":
            _, name, x = record
            if param_grads:
                grads[f"{name}.w"] = x.T @ g
                grads[f"{name}.b"] = g.sum(axis=0)
            g = g @ params[f"{name}.w"].T
        elif kind == "relu":
            g = g * (record[1] > 0)
        elif kind == "tanh":
            y = record[1]
            g = g * (1.0 - y * y)
        elif kind == "flatten":
            g = g.reshape(record[1])
        elif kind == "conv":
            _, name, cols, x_shape, k, stride, oh, ow = record
            w = params[f"{name}.w"]
            c_out = w.shape[0]
            gy = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
            if param_grads:
                grads[f"{name}.w"] = (gy.T @ cols).reshape(w.shape)
                grads[f"{name}.b"] = gy.sum(axis=0)
            gcols = (gy @ w.reshape(c_out, -1)).reshape(x_shape[0], oh, ow, x_shape[1], k, k)
            gx = np.zeros(x_shape, dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    gx[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += \
                        gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            g = gx
    if param_grads:
        grads = {name: grads[name] for name in params if name in grads}
    return grads, g


def mlp_forward(net: Network, params: ParamSet, x):
    return forward(net, params, x)


def conv_forward(net: Network, params: ParamSet, image):
    return forward(net, params, image)


# -- optimisation -------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: ParamSet
    v: ParamSet
    step: int = 0
    lr: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_init(params: ParamSet, lr=1e-4) -> AdamState:
    return AdamState(params.zeros_like(), params.zeros_like(), 0, lr)


def adam_step(params: ParamSet, grads, state: AdamState):
    """One bias-corrected Adam update; returns (params, state).

    Non-finite gradients skip the update and leave both unchanged.
    """
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameters")
    if not all(np.all(np.isfinite(grads[k])) for k in params):
        log.warning("non-finite gradient at Adam step %d; update skipped", state.step + 1)
        return params, state
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k]
        m += (1.0 - b1) * g
        v = b2 * state.v[k]
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        new_p[k] = p - (state.lr / c1) * m / denom
        new_m[k], new_v[k] = m, v
    return (ParamSet._adopt(new_p),
            replace(state, m=ParamSet._adopt(new_m), v=ParamSet._adopt(new_v), step=t))


def soft_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    """Polyak average: tau * online + (1 - tau) * target, elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.shapes() != online.shapes():
        raise ValueError("target and online parameter shapes differ")
    return ParamSet._adopt({k: tau * online[k] + (1.0 - tau) * target[k] for k in target})


# -- checkpoint format --------------------------------------------------------
# b"D3RQ" | u16 version | u32 count | per tensor:
#   u16 name_len | name utf-8 | u8 dtype | u8 ndim | u64 dims[ndim] | u64 nbytes | payload (LE)

CHECKPOINT_MAGIC = b"D3RQ"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3,
                np.dtype("u1"): 4, np.dtype("<i4"): 5}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


def encode_tensors(tensors: Mapping) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<")
        if le not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        payload = np.ascontiguousarray(arr, dtype=le).tobytes()
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _DTYPE_CODES[le], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def decode_tensors(data) -> dict:
    view = memoryview(data)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        version, count = struct.unpack_from("<HI", view, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 10
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            code, ndim = struct.unpack_from("<BB", view, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", view, pos)
            pos += 8
            if code not in _CODE_DTYPES:
                raise CheckpointError(f"unknown dtype code {code}")
            if pos + nbytes > len(view):
                raise CheckpointError("truncated tensor payload")
            dtype = _CODE_DTYPES[code]
            arr = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
            pos += nbytes
            out[name] = arr
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint")
    return out


def save_checkpoint(path, tensors: Mapping):
    with open(path, "wb") as fh:
        fh.write(encode_tensors(tensors))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return decode_tensors(fh.read())
