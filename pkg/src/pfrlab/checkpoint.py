"""Versioned policy checkpoints: architecture + flat parameters + observation schema hash."""
from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np
import torch

from .policy import ArchitectureSpec, PolicyNet

FORMAT = "pfrlab-checkpoint"
FORMAT_VERSION = 1


class SchemaMismatch(ValueError):
    def __init__(self, stored: str, expected: str):
        super().__init__(f"checkpoint observation schema {stored} does not match environment schema {expected}")
        self.stored, self.expected = stored, expected


def save_checkpoint(path, net: PolicyNet, schema_hash: str, extra: dict | None = None) -> Path:
    """Write ``path`` (``.npz``) atomically."""
    path = Path(path)
    meta = {"format": FORMAT, "version": FORMAT_VERSION, "architecture": net.spec.to_dict(),
            "schema_hash": schema_hash, "parameter_count": net.spec.parameter_count(),
            "dtype": str(next(net.parameters()).dtype).replace("torch.", ""), **(extra or {})}
    params = net.flat_parameters().cpu().numpy()
    buf = io.BytesIO()
    np.savez(buf, params=params, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def read_meta(path) -> dict:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')} (expected {FORMAT_VERSION})")
    return meta


def load_checkpoint(path, expected_schema_hash: str | None = None) -> tuple:
    """Return (net, meta). Refuses a schema different from ``expected_schema_hash``."""
    meta = read_meta(path)
    if expected_schema_hash is not None and meta["schema_hash"] != expected_schema_hash:
        raise SchemaMismatch(meta["schema_hash"], expected_schema_hash)
    spec = ArchitectureSpec.from_dict(meta["architecture"])
    net = PolicyNet(spec)
    if meta.get("dtype") == "float64":
        net = net.double()
    with np.load(path) as z:
        net.load_flat_parameters(torch.as_tensor(z["params"]))
    net.eval()
    return net, meta
