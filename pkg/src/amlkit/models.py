"""The six encoder architectures mapping a feature vector to an embedding.

Every model consumes a length-d feature vector treated as a 1-channel
sequence (for the convolutional stacks) and produces a length-e embedding.
The autoencoder variant also exposes a decoder for reconstruction scoring.
Built models are immutable parameter snapshots once training stops; embed is
a pure function safe for concurrent callers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import StandardizationParams
from .rng import SeededRng

SIMPLE_CNN = "simple_cnn"
DEEP_CNN = "deep_cnn"
CNN_LSTM = "cnn_lstm"
ABAD = "abad"
HYBRID_CNN_GRU = "hybrid_cnn_gru"
CRNIM = "crnim"

ARCHITECTURES = (SIMPLE_CNN, DEEP_CNN, CNN_LSTM, ABAD, HYBRID_CNN_GRU, CRNIM)

DISPLAY_NAMES = {
    SIMPLE_CNN: "Simple CNN",
    DEEP_CNN: "Deep CNN",
    CNN_LSTM: "CNN-LSTM",
    ABAD: "ABAD",
    HYBRID_CNN_GRU: "Hybrid CNN-GRU",
    CRNIM: "Ours(CRNIM)",
}

_HIDDEN = 32  # recurrent hidden width shared by the LSTM/GRU variants

MODEL_FORMAT_VERSION = 1


def normalize_architecture(tag: str) -> str:
    """Accept display spellings ('CNN-LSTM', 'Ours(CRNIM)') alongside tags."""
    key = tag.strip().lower().replace("-", "_").replace(" ", "_")
    if key in ("ours(crnim)", "ours_crnim"):
        key = CRNIM
    if key not in ARCHITECTURES:
        raise ValueError(f"unknown architecture '{tag}' "
                         f"(expected one of {', '.join(ARCHITECTURES)})")
    return key


@dataclass
class EncoderModel:
    """Architecture tag plus named parameter tensors."""

    architecture: str
    d: int
    e: int
    params: dict[str, Node] = field(repr=False)

    def parameters(self) -> list[Node]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params.values())


def _uniform_init(rng: SeededRng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    size = int(np.prod(shape))
    return rng.uniforms(size, -limit, limit).reshape(shape)


def _add_dense(params: dict, rng: SeededRng, name: str, n_in: int, n_out: int) -> None:
    params[f"{name}.w"] = ad.parameter(_uniform_init(rng, (n_in, n_out), n_in, n_out),
                                       name=f"{name}.w")
    params[f"{name}.b"] = ad.parameter(np.zeros(n_out), name=f"{name}.b")


def _add_conv(params: dict, rng: SeededRng, name: str, c_out: int, c_in: int, k: int) -> None:
    init = _uniform_init(rng, (c_out, c_in, k), c_in * k, c_out * k)
    params[f"{name}.w"] = ad.parameter(init, name=f"{name}.w")
    params[f"{name}.b"] = ad.parameter(np.zeros(c_out), name=f"{name}.b")


def _add_recurrent(params: dict, rng: SeededRng, name: str, n_in: int, gates: int) -> None:
    width = gates * _HIDDEN
    params[f"{name}.w_ih"] = ad.parameter(_uniform_init(rng, (n_in, width), n_in, width),
                                          name=f"{name}.w_ih")
    params[f"{name}.w_hh"] = ad.parameter(_uniform_init(rng, (_HIDDEN, width), _HIDDEN, width),
                                          name=f"{name}.w_hh")
    params[f"{name}.b_ih"] = ad.parameter(np.zeros(width), name=f"{name}.b_ih")
    params[f"{name}.b_hh"] = ad.parameter(np.zeros(width), name=f"{name}.b_hh")


def build(architecture: str, d: int, e: int = 32, rng: SeededRng | None = None) -> EncoderModel:
    """Construct a model with deterministic initialization from the rng."""
    arch = normalize_architecture(architecture)
    if d < 2:
        raise ValueError(f"feature dimension must be at least 2, got {d}")
    if e < 2:
        raise ValueError(f"embedding dimension must be at least 2, got {e}")
    rng = rng if rng is not None else SeededRng(0)
    params: dict[str, Node] = {}
    if arch == SIMPLE_CNN:
        _add_conv(params, rng, "conv1", 8, 1, 3)
        _add_conv(params, rng, "conv2", 16, 8, 3)
        _add_dense(params, rng, "head", 16, e)
    elif arch == DEEP_CNN:
        _add_conv(params, rng, "conv1", 8, 1, 3)
        _add_conv(params, rng, "conv2", 16, 8, 3)
        _add_conv(params, rng, "conv3", 32, 16, 3)
        _add_conv(params, rng, "conv4", 32, 32, 3)
        _add_dense(params, rng, "head", 32, e)
    elif arch == CNN_LSTM:
        _add_conv(params, rng, "conv1", 8, 1, 3)
        _add_conv(params, rng, "conv2", 16, 8, 3)
        _add_recurrent(params, rng, "lstm", 16, 4)
        _add_dense(params, rng, "head", _HIDDEN, e)
    elif arch == ABAD:
        _add_dense(params, rng, "enc1", d, 64)
        _add_dense(params, rng, "enc2", 64, e)
        _add_dense(params, rng, "dec1", e, 64)
        _add_dense(params, rng, "dec2", 64, d)
    elif arch == HYBRID_CNN_GRU:
        _add_conv(params, rng, "conv1", 8, 1, 3)
        _add_conv(params, rng, "conv2", 16, 8, 3)
        _add_recurrent(params, rng, "gru", 16, 3)
        _add_dense(params, rng, "head", _HIDDEN, e)
    elif arch == CRNIM:
        _add_conv(params, rng, "conv1", 8, 1, 3)
        _add_conv(params, rng, "conv2", 16, 8, 3)
        _add_conv(params, rng, "conv3", 32, 16, 3)
        _add_conv(params, rng, "conv4", 32, 32, 3)
        _add_recurrent(params, rng, "gru", 1, 3)
        _add_dense(params, rng, "skip", d, 2 * _HIDDEN)
        _add_dense(params, rng, "fuse", 2 * _HIDDEN, e)
    return EncoderModel(architecture=arch, d=d, e=e, params=params)


def _as_batch(model: EncoderModel, x) -> tuple[Node, bool]:
    xn = ad.as_node(x)
    single = xn.value.ndim == 1
    if single:
        xn = ad.reshape(xn, (1, xn.value.shape[0]))
    if xn.value.ndim != 2 or xn.value.shape[1] != model.d:
        raise ValueError(f"{model.architecture}: expected input of length {model.d}, "
                         f"got shape {np.asarray(x).shape}")
    return xn, single


def _dense(params: dict[str, Node], name: str, h: Node) -> Node:
    return ad.add(ad.matmul(h, params[f"{name}.w"]), params[f"{name}.b"])


def _conv_relu(params: dict[str, Node], name: str, h: Node) -> Node:
    w = params[f"{name}.w"]
    b = params[f"{name}.b"]
    bias = ad.reshape(b, (1, b.value.shape[0], 1))
    return ad.relu(ad.add(ad.conv1d(h, w), bias))


def _simple_stack(params: dict[str, Node], x3: Node) -> Node:
    h = _conv_relu(params, "conv1", x3)
    h = _conv_relu(params, "conv2", h)
    return ad.maxpool2(h)


def _deep_stack(params: dict[str, Node], x3: Node) -> Node:
    h = _conv_relu(params, "conv1", x3)
    h = _conv_relu(params, "conv2", h)
    h = ad.maxpool2(h)
    h = _conv_relu(params, "conv3", h)
    h = _conv_relu(params, "conv4", h)
    return ad.maxpool2(h)


def _time_slices(h: Node) -> list[Node]:
    batch, channels, length = h.value.shape
    return [ad.reshape(ad.narrow(h, 2, t, 1), (batch, channels)) for t in range(length)]


def _lstm_last(params: dict[str, Node], name: str, steps: list[Node]) -> Node:
    batch = steps[0].value.shape[0]
    h = ad.constant(np.zeros((batch, _HIDDEN)))
    c = ad.constant(np.zeros((batch, _HIDDEN)))
    w_ih, w_hh = params[f"{name}.w_ih"], params[f"{name}.w_hh"]
    b_ih, b_hh = params[f"{name}.b_ih"], params[f"{name}.b_hh"]
    H = _HIDDEN
    for x_t in steps:
        gates = ad.add(ad.add(ad.matmul(x_t, w_ih), b_ih),
                       ad.add(ad.matmul(h, w_hh), b_hh))
        i = ad.sigmoid(ad.narrow(gates, 1, 0, H))
        f = ad.sigmoid(ad.narrow(gates, 1, H, H))
        g = ad.tanh(ad.narrow(gates, 1, 2 * H, H))
        o = ad.sigmoid(ad.narrow(gates, 1, 3 * H, H))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
    return h


def _gru_last(params: dict[str, Node], name: str, steps: list[Node]) -> Node:
    batch = steps[0].value.shape[0]
    h = ad.constant(np.zeros((batch, _HIDDEN)))
    w_ih, w_hh = params[f"{name}.w_ih"], params[f"{name}.w_hh"]
    b_ih, b_hh = params[f"{name}.b_ih"], params[f"{name}.b_hh"]
    H = _HIDDEN
    one = ad.constant(1.0)
    for x_t in steps:
        gx = ad.add(ad.matmul(x_t, w_ih), b_ih)
        gh = ad.add(ad.matmul(h, w_hh), b_hh)
        r = ad.sigmoid(ad.add(ad.narrow(gx, 1, 0, H), ad.narrow(gh, 1, 0, H)))
        u = ad.sigmoid(ad.add(ad.narrow(gx, 1, H, H), ad.narrow(gh, 1, H, H)))
        n = ad.tanh(ad.add(ad.narrow(gx, 1, 2 * H, H),
                           ad.mul(r, ad.narrow(gh, 1, 2 * H, H))))
        h = ad.add(ad.mul(u, h), ad.mul(ad.sub(one, u), n))
    return h


def _forward_abad(params: dict[str, Node], x2: Node) -> tuple[Node, Node]:
    hidden = ad.relu(_dense(params, "enc1", x2))
    z = _dense(params, "enc2", hidden)
    dec_hidden = ad.relu(_dense(params, "dec1", z))
    recon = _dense(params, "dec2", dec_hidden)
    return z, recon


def embedding_node(model: EncoderModel, x) -> Node:
    """Differentiable embedding of a [batch, d] (or [d]) input; output [batch, e]."""
    x2, single = _as_batch(model, x)
    p = model.params
    arch = model.architecture
    if arch == ABAD:
        z, _ = _forward_abad(p, x2)
    else:
        batch = x2.value.shape[0]
        x3 = ad.reshape(x2, (batch, 1, model.d))
        if arch == SIMPLE_CNN:
            h = _simple_stack(p, x3)
            z = _dense(p, "head", ad.reduce_mean(h, axis=2))
        elif arch == DEEP_CNN:
            h = _deep_stack(p, x3)
            z = _dense(p, "head", ad.reduce_mean(h, axis=2))
        elif arch == CNN_LSTM:
            h = _simple_stack(p, x3)
            z = _dense(p, "head", _lstm_last(p, "lstm", _time_slices(h)))
        elif arch == HYBRID_CNN_GRU:
            h = _simple_stack(p, x3)
            z = _dense(p, "head", _gru_last(p, "gru", _time_slices(h)))
        else:  # CRNIM: parallel conv and recurrent branches with a residual skip
            conv_branch = ad.reduce_mean(_deep_stack(p, x3), axis=2)
            seq = [ad.reshape(ad.narrow(x2, 1, t, 1), (batch, 1)) for t in range(model.d)]
            gru_branch = _gru_last(p, "gru", seq)
            fused = ad.add(ad.concat([conv_branch, gru_branch], axis=1),
                           _dense(p, "skip", x2))
            z = _dense(p, "fuse", fused)
    if single:
        z = ad.reshape(z, (model.e,))
    return z


def embed(model: EncoderModel, features) -> np.ndarray:
    """Embedding values without gradient tracking concerns; pure function."""
    return embedding_node(model, np.asarray(features, dtype=np.float64)).value


def embed_dataset(model: EncoderModel, features: np.ndarray, batch: int = 512) -> np.ndarray:
    """Embed many rows in batches; returns [n, e]."""
    features = np.asarray(features, dtype=np.float64)
    chunks = [embed(model, features[i:i + batch]) for i in range(0, len(features), batch)]
    return np.vstack(chunks) if chunks else np.empty((0, model.e))


def reconstruction_node(model: EncoderModel, x) -> tuple[Node, Node]:
    """(embedding, reconstruction) pair for the autoencoder architecture."""
    if model.architecture != ABAD:
        raise ValueError(f"reconstruction is only defined for the {ABAD} architecture, "
                         f"got '{model.architecture}'")
    x2, single = _as_batch(model, x)
    z, recon = _forward_abad(model.params, x2)
    if single:
        z = ad.reshape(z, (model.e,))
        recon = ad.reshape(recon, (model.d,))
    return z, recon


def mean_squared_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mean_squared_error: shapes {a.shape} and {b.shape} differ")
    return float(np.mean((a - b) ** 2))


def reconstruction_error(model: EncoderModel, features) -> float:
    """Mean squared reconstruction error; the autoencoder's anomaly score."""
    _, recon = reconstruction_node(model, features)
    return mean_squared_error(np.asarray(features, dtype=np.float64), recon.value)


def reconstruction_errors(model: EncoderModel, features: np.ndarray,
                          batch: int = 512) -> np.ndarray:
    """Per-row reconstruction errors for a [n, d] matrix."""
    features = np.asarray(features, dtype=np.float64)
    out = np.empty(len(features))
    for i in range(0, len(features), batch):
        rows = features[i:i + batch]
        _, recon = reconstruction_node(model, rows)
        out[i:i + len(rows)] = np.mean((rows - recon.value) ** 2, axis=1)
    return out


def save_model(model: EncoderModel, path,
               standardizer: StandardizationParams | None = None) -> None:
    """Write a model (optionally with its standardizer) as a JSON artifact."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "architecture": model.architecture,
        "d": model.d,
        "e": model.e,
        "params": {
            name: {"shape": list(p.value.shape), "values": p.value.reshape(-1).tolist()}
            for name, p in model.params.items()
        },
    }
    if standardizer is not None:
        payload["standardizer"] = {
            "mean": standardizer.mean.tolist(),
            "std": standardizer.std.tolist(),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> tuple[EncoderModel, StandardizationParams | None]:
    """Exact round-trip of `save_model`."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    model = build(payload["architecture"], payload["d"], payload["e"], SeededRng(0))
    for name, entry in payload["params"].items():
        if name not in model.params:
            raise ValueError(f"model file has unexpected parameter '{name}'")
        values = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != model.params[name].value.shape:
            raise ValueError(f"parameter '{name}' has shape {values.shape}, "
                             f"expected {model.params[name].value.shape}")
        model.params[name].value = values
    standardizer = None
    if "standardizer" in payload:
        mean = np.array(payload["standardizer"]["mean"], dtype=np.float64)
        std = np.array(payload["standardizer"]["std"], dtype=np.float64)
        standardizer = StandardizationParams(mean=mean, std=std, constant_mask=std == 0.0)
    return model, standardizer
