"""Binary checkpoint serialization.

Layout (all integers unsigned 32-bit little-endian, floats IEEE-754
float64 little-endian):

    magic            4 bytes  b"EOTB"
    format version   u32      (loaders reject anything newer than theirs)
    K                u32      number of networks
    D                u32      ambient (barycenter-side) dimension
    epsilon          f64
    lambda           K x f64
    per network, k = 0..K-1:
        layer count  u32      number of weight layers
        layer dims   (layer count + 1) x u32   (input, hidden..., 1)
        weights      n_params x f64            (layer-major: W row-major, then b)
    metadata length  u32
    metadata         JSON, UTF-8, sorted keys

The metadata JSON carries activations, iteration, seed, rng digest, loss
history, optimizer state (moment arrays as base64 of raw f64 bytes),
source/cost descriptions and the training config.  Because the JSON is
dumped with sorted keys and floats round-trip through repr, a load
followed by a save reproduces the file byte-for-byte.
"""

from __future__ import annotations

import base64
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .congruent import CongruentPotentials
from .nnet import Activation, NetParams, NetSpec
from .trainer import Checkpoint

MAGIC = b"EOTB"
FORMAT_VERSION = 1


def _f64_b64(arr) -> str:
    return base64.b64encode(np.asarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _b64_f64(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8").copy()


def _pack_optimizer(state: dict) -> dict:
    if state.get("name") != "adam":
        return dict(state)
    return {
        "name": "adam",
        "t": int(state["t"]),
        "m_b64": [_f64_b64(m) for m in state["m"]],
        "v_b64": [_f64_b64(v) for v in state["v"]],
    }


def _unpack_optimizer(state: dict) -> dict:
    if state.get("name") != "adam":
        return dict(state)
    return {
        "name": "adam",
        "t": int(state["t"]),
        "m": [[float(x) for x in _b64_f64(m)] for m in state["m_b64"]],
        "v": [[float(x) for x in _b64_f64(v)] for v in state["v_b64"]],
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    ps = ckpt.potentials
    k = ps.k_count
    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, k, ps.input_dim)]
    parts.append(struct.pack("<d", float(ckpt.epsilon)))
    parts.append(np.asarray(ps.weights, dtype="<f8").tobytes())
    for net in ps.nets:
        dims = net.spec.layer_dims
        parts.append(struct.pack("<I", len(dims) - 1))
        parts.append(struct.pack(f"<{len(dims)}I", *dims))
        parts.append(np.asarray(net.weights, dtype="<f8").tobytes())
    meta = {
        "activations": [n.spec.activation.value for n in ps.nets],
        "iteration": int(ckpt.iteration),
        "seed": int(ckpt.seed),
        "rng_state_digest": ckpt.rng_state_digest,
        "loss_history": [[int(i), float(l), float(w)] for i, l, w in ckpt.loss_history],
        "optimizer_state": _pack_optimizer(ckpt.optimizer_state),
        "cost_dicts": ckpt.cost_dicts,
        "source_dicts": ckpt.source_dicts,
        "train_config": ckpt.train_config,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


class CheckpointFormatError(ValueError):
    pass


def checkpoint_from_bytes(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    version, k, dim = struct.unpack_from("<III", raw, 4)
    if version > FORMAT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint format version {version} is newer than the supported {FORMAT_VERSION}"
        )
    ofs = 16
    (epsilon,) = struct.unpack_from("<d", raw, ofs)
    ofs += 8
    weights = np.frombuffer(raw, dtype="<f8", count=k, offset=ofs).copy()
    ofs += 8 * k
    net_payloads = []
    for _ in range(k):
        (layer_count,) = struct.unpack_from("<I", raw, ofs)
        ofs += 4
        dims = struct.unpack_from(f"<{layer_count + 1}I", raw, ofs)
        ofs += 4 * (layer_count + 1)
        n_params = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(layer_count))
        flat = np.frombuffer(raw, dtype="<f8", count=n_params, offset=ofs).copy()
        ofs += 8 * n_params
        net_payloads.append((dims, flat))
    (meta_len,) = struct.unpack_from("<I", raw, ofs)
    ofs += 4
    meta = json.loads(raw[ofs : ofs + meta_len].decode("utf-8"))

    nets = []
    for (dims, flat), act in zip(net_payloads, meta["activations"]):
        if dims[0] != dim or dims[-1] != 1:
            raise CheckpointFormatError("inconsistent network dimensions in checkpoint")
        spec = NetSpec(dims[0], tuple(dims[1:-1]), Activation(act))
        nets.append(NetParams(spec, flat))
    ps = CongruentPotentials(nets, weights)
    return Checkpoint(
        potentials=ps,
        epsilon=float(epsilon),
        cost_dicts=meta["cost_dicts"],
        source_dicts=meta["source_dicts"],
        iteration=int(meta["iteration"]),
        seed=int(meta["seed"]),
        rng_state_digest=meta["rng_state_digest"],
        loss_history=[(int(i), float(l), float(w)) for i, l, w in meta["loss_history"]],
        optimizer_state=_unpack_optimizer(meta["optimizer_state"]),
        train_config=meta["train_config"],
        format_version=int(version),
    )


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
