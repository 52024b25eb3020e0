"""Versioned binary checkpoint container.

Layout: magic ``IMFC``, u32 format version, u64 header length, a JSON header
(model config plus its digest, the training-manifest digest, free-form
metadata, and the ordered block table), then the raw float64 block data.
Serialization is fully deterministic, so identical parameters produce
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from imface.model import ModelConfig

_MAGIC = b"IMFC"
_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], cfg: ModelConfig,
                    manifest_digest: str = "", meta: dict | None = None) -> None:
    names = sorted(params)
    header = {
        "config": asdict(cfg),
        "config_digest": cfg.digest(),
        "manifest_digest": manifest_digest,
        "meta": meta or {},
        "blocks": [{"name": n, "shape": list(np.shape(params[n]))} for n in names],
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(payload)))
        fh.write(payload)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path, expect_config: ModelConfig | None = None):
    """Returns (params, config, manifest_digest, meta).

    Rejects files whose stored config digest does not match the stored
    config, and (when ``expect_config`` is given) checkpoints trained under
    a different model configuration.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        cfg = ModelConfig(**header["config"])
        if cfg.digest() != header["config_digest"]:
            raise ValueError(f"{path}: config digest mismatch (corrupt header)")
        if expect_config is not None and expect_config.digest() != cfg.digest():
            raise ValueError(
                f"{path}: checkpoint config digest {cfg.digest()[:12]} does not match "
                f"expected {expect_config.digest()[:12]}"
            )
        params = {}
        for block in header["blocks"]:
            shape = tuple(block["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ValueError(f"{path}: truncated block {block['name']}")
            params[block["name"]] = data.reshape(shape).astype(np.float64)
    return params, cfg, header["manifest_digest"], header["meta"]
