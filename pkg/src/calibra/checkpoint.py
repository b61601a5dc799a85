"""Posterior checkpoints.

Layout (little-endian)::

    magic      8 bytes  b"CALIBRA\\x00"
    version    u32
    meta_len   u32      then meta_len bytes of UTF-8 JSON (spec, prior, seed)
    n          u64      then n float64 mu, then n float64 rho
    crc32      u32      over everything before it
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .models import MlpSpec
from .variational import GaussianPrior, VariationalPosterior

MAGIC = b"CALIBRA\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


class Checkpoint(NamedTuple):
    spec: MlpSpec
    posterior: VariationalPosterior
    prior: GaussianPrior
    seed: int


def encode(ckpt: Checkpoint) -> bytes:
    meta = json.dumps({
        "spec": ckpt.spec.to_dict(),
        "prior": {"mean": ckpt.prior.mean, "std": ckpt.prior.std},
        "seed": int(ckpt.seed),
    }, sort_keys=True).encode()
    mu = np.ascontiguousarray(ckpt.posterior.mu, dtype="<f8")
    rho = np.ascontiguousarray(ckpt.posterior.rho, dtype="<f8")
    body = b"".join([
        MAGIC,
        struct.pack("<II", VERSION, len(meta)), meta,
        struct.pack("<Q", mu.size), mu.tobytes(), rho.tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", body, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    try:
        meta = json.loads(body[pos:pos + meta_len].decode())
        pos += meta_len
        (n,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if len(body) - pos != 16 * n:
            raise CheckpointError(f"expected {n} parameters, payload has {len(body) - pos} bytes")
        mu = np.frombuffer(body, "<f8", n, pos).astype(float)
        rho = np.frombuffer(body, "<f8", n, pos + 8 * n).astype(float)
        spec = MlpSpec.from_dict(meta["spec"])
        prior = GaussianPrior(meta["prior"]["mean"], meta["prior"]["std"])
        seed = int(meta["seed"])
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, struct.error) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if spec.param_count != n:
        raise CheckpointError(f"spec has {spec.param_count} parameters but checkpoint stores {n}")
    return Checkpoint(spec, VariationalPosterior(mu, rho), prior, seed)


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
