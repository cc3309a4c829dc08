"""Dilated causal TCN encoder, projector heads, mirrored decoder and checkpoints.

Parameters live in flat ``dict[str, Tensor]`` maps so they can be copied,
averaged and serialised without a module system.

Block layout (pinned here, not inferred): each residual block applies two
causal convolutions, each followed by layer norm and ReLU, then adds the
block input (through a 1x1 convolution when the channel count changes).
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .exceptions import DataError, ShapeError

CHECKPOINT_FORMAT = "ncl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    kernel: int = 2
    filters: int = 64
    dilations: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    convs_per_block: int = 2
    embed_dim: int = 64
    proj_hidden: int | None = None
    proj_out: int | None = None

    def __post_init__(self):
        self.dilations = list(self.dilations)
        if self.proj_hidden is None:
            self.proj_hidden = self.embed_dim
        if self.proj_out is None:
            self.proj_out = self.embed_dim

    @property
    def blocks(self):
        return len(self.dilations)

    def receptive_field(self):
        return 1 + self.convs_per_block * (self.kernel - 1) * sum(self.dilations)

    def to_dict(self):
        return asdict(self)


def _uniform(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return ag.Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(shape):
    return ag.Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return ag.Tensor(np.ones(shape), requires_grad=True)


def _init_tcn(prefix, cfg, n_in, rng, dilations):
    params = {}
    c_in = n_in
    for b, _ in enumerate(dilations):
        for c in range(cfg.convs_per_block):
            src = c_in if c == 0 else cfg.filters
            key = f"{prefix}.block{b}.conv{c}"
            params[key + ".w"] = _uniform(rng, cfg.kernel * src, (cfg.kernel, src, cfg.filters))
            params[key + ".b"] = _zeros(cfg.filters)
            params[key + ".ln_g"] = _ones(cfg.filters)
            params[key + ".ln_b"] = _zeros(cfg.filters)
        if c_in != cfg.filters:
            params[f"{prefix}.block{b}.res.w"] = _uniform(rng, c_in, (1, c_in, cfg.filters))
            params[f"{prefix}.block{b}.res.b"] = _zeros(cfg.filters)
        c_in = cfg.filters
    return params


def _tcn(x, params, prefix, cfg, dilations):
    for b, d in enumerate(dilations):
        h = x
        for c in range(cfg.convs_per_block):
            key = f"{prefix}.block{b}.conv{c}"
            h = ag.causal_conv1d(h, params[key + ".w"], params[key + ".b"], dilation=d)
            h = ag.relu(ag.layer_norm(h, params[key + ".ln_g"], params[key + ".ln_b"]))
        res_key = f"{prefix}.block{b}.res.w"
        res = ag.causal_conv1d(x, params[res_key], params[f"{prefix}.block{b}.res.b"]) if res_key in params else x
        x = ag.add(h, res)
    return x


def init_encoder(cfg: EncoderConfig, n_channels, n_static, rng) -> dict:
    params = _init_tcn("enc", cfg, n_channels, rng, cfg.dilations)
    fan_in = cfg.filters + n_static
    params["enc.dense.w"] = _uniform(rng, fan_in, (fan_in, cfg.embed_dim))
    params["enc.dense.b"] = _zeros(cfg.embed_dim)
    return params


def encode(windows, static, params, cfg: EncoderConfig, normalize=True) -> ag.Tensor:
    """(B, t_h, C) windows and (B, S) statics -> (B, embed_dim) representations."""
    windows = ag.as_tensor(windows)
    static = ag.as_tensor(static)
    n_in = params["enc.block0.conv0.w"].shape[1]
    if windows.ndim != 3 or windows.shape[2] != n_in:
        raise ShapeError("encode.windows", windows.shape, (None, None, n_in))
    n_static = params["enc.dense.w"].shape[0] - cfg.filters
    if static.ndim != 2 or static.shape != (windows.shape[0], n_static):
        raise ShapeError("encode.static", static.shape, (windows.shape[0], n_static))
    h = _tcn(windows, params, "enc", cfg, cfg.dilations)
    last = ag.getitem(h, (slice(None), -1))
    z = ag.add(ag.matmul(ag.concat([last, static], axis=-1), params["enc.dense.w"]), params["enc.dense.b"])
    return ag.l2_normalize(z) if normalize else z


def init_projector(cfg: EncoderConfig, rng, prefix="proj") -> dict:
    return {
        f"{prefix}.w1": _uniform(rng, cfg.embed_dim, (cfg.embed_dim, cfg.proj_hidden)),
        f"{prefix}.b1": _zeros(cfg.proj_hidden),
        f"{prefix}.w2": _uniform(rng, cfg.proj_hidden, (cfg.proj_hidden, cfg.proj_out)),
        f"{prefix}.b2": _zeros(cfg.proj_out),
    }


def project(z, params, prefix="proj") -> ag.Tensor:
    """dense -> ReLU -> dense -> unit sphere."""
    h = ag.relu(ag.add(ag.matmul(z, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ag.l2_normalize(ag.add(ag.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"]))


def init_decoder(cfg: EncoderConfig, n_channels, n_static, t_h, rng) -> dict:
    """Mirror of the encoder: embedding -> per-step sequence -> TCN (reversed dilations) -> channels.

    The output layers start at zero so an untrained decoder predicts zeros.
    """
    params = {
        "dec.in.w": _uniform(rng, cfg.embed_dim, (cfg.embed_dim, cfg.filters)),
        "dec.in.b": _zeros(cfg.filters),
        "dec.pos": ag.Tensor(rng.normal(0.0, 0.1, size=(t_h, cfg.filters)), requires_grad=True),
    }
    params.update(_init_tcn("dec", cfg, cfg.filters, rng, cfg.dilations[::-1]))
    params["dec.out.w"] = _zeros((cfg.filters, n_channels))
    params["dec.out.b"] = _zeros(n_channels)
    params["dec.static.w"] = _zeros((cfg.embed_dim, n_static))
    params["dec.static.b"] = _zeros(n_static)
    return params


def decode(z, params, cfg: EncoderConfig):
    """(B, embed_dim) -> ((B, t_h, C) sequence, (B, S) static)."""
    t_h = params["dec.pos"].shape[0]
    h = ag.add(ag.matmul(z, params["dec.in.w"]), params["dec.in.b"])
    h = ag.add(ag.broadcast_time(h, t_h), params["dec.pos"])
    h = _tcn(h, params, "dec", cfg, cfg.dilations[::-1])
    seq = ag.add(ag.matmul(h, params["dec.out.w"]), params["dec.out.b"])
    static = ag.add(ag.matmul(z, params["dec.static.w"]), params["dec.static.b"])
    return seq, static


def copy_params(params, requires_grad=None) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = ag.Tensor(v.data.copy(), requires_grad=v.requires_grad if requires_grad is None else requires_grad)
    return out


def subset(params, prefix):
    return {k: v for k, v in params.items() if k.startswith(prefix + ".")}


def _encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def checkpoint_bytes(params, header) -> bytes:
    """Byte-stable JSON dump: config header plus base64 float64 tensors."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "header": header,
        "params": {k: _encode_array(v.data if isinstance(v, ag.Tensor) else v) for k, v in sorted(params.items())},
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()


def save_checkpoint(path, params, header):
    data = checkpoint_bytes(params, header)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path):
    """-> (params dict of Tensors, header dict)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    params = {k: ag.Tensor(_decode_array(v), requires_grad=True) for k, v in doc["params"].items()}
    return params, doc["header"]
