"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"SGLAB1"
    u32 header length, header bytes (UTF-8 JSON: architecture + schedule)
    u32 array count
    per array:
        u16 name length, name bytes (UTF-8)
        u8 dtype code (1 = float64)
        u8 ndim, ndim x u64 dims
        prod(dims) float64 values, little-endian, C order
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..schedule import NoiseSchedule
from .net import ScoreNet

MAGIC = b"SGLAB1"
F64 = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: ScoreNet, path):
    header = {
        "dim": net.dim,
        "hidden": list(net.hidden),
        "emb_dim": net.emb_dim,
        "n_classes": net.n_classes,
        "parameterization": net.parameterization,
        "schedule": None if net.schedule is None else {
            "kind": net.schedule.kind,
            "beta_min": net.schedule.beta_min,
            "beta_max": net.schedule.beta_max,
            "discretization_steps": net.schedule.discretization_steps,
            "t_eps": net.schedule.t_eps,
        },
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(struct.pack("<I", len(net.params)))
        for name in sorted(net.params):
            arr = np.ascontiguousarray(net.params[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", F64, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> ScoreNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an SGLAB1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (hlen,) = take("<I")
        header = json.loads(blob[pos : pos + hlen].decode())
        pos += hlen
        (count,) = take("<I")
        params = {}
        for _ in range(count):
            (nlen,) = take("<H")
            name = blob[pos : pos + nlen].decode()
            pos += nlen
            code, ndim = take("<BB")
            if code != F64:
                raise CheckpointError(f"{path}: unsupported dtype code {code}")
            shape = take(f"<{ndim}Q")
            size = int(np.prod(shape)) * 8
            if pos + size > len(blob):
                raise CheckpointError(f"{path}: truncated checkpoint")
            params[name] = np.frombuffer(blob[pos : pos + size], dtype="<f8").reshape(shape).astype(float)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    sched = header.pop("schedule")
    net = ScoreNet(
        schedule=None if sched is None else NoiseSchedule(**sched),
        params=params,
        **{k: header[k] for k in ("dim", "hidden", "emb_dim", "n_classes", "parameterization")},
    )
    expected = net.param_shapes()
    if {k: v.shape for k, v in params.items()} != expected:
        raise CheckpointError(f"{path}: parameter shapes do not match the stored architecture")
    return net
