"""Model checkpoints: little-endian tensors keyed by layer name behind a JSON header.

The file layout is the safetensors format (8-byte header length, JSON header
with dtypes, shapes and offsets, raw data); run configuration and seed go in
the header metadata.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch
from safetensors import safe_open
from safetensors.torch import save_file

HEADER_KEY = "tryon"


def save_checkpoint(path: Path | str, model: torch.nn.Module, config: dict, seed: int, step: int) -> None:
    tensors = {k: v.detach().contiguous().cpu() for k, v in model.state_dict().items()}
    # one metadata entry: multi-key metadata is written in hash order, which varies per process
    header = json.dumps({"config": config, "seed": seed, "step": step}, sort_keys=True)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(path), metadata={HEADER_KEY: header})


def read_header(path: Path | str) -> dict:
    with safe_open(str(path), framework="pt") as f:
        meta = f.metadata() or {}
    header = json.loads(meta.get(HEADER_KEY, "{}"))
    return {"config": header.get("config", {}), "seed": int(header.get("seed", 0)),
            "step": int(header.get("step", 0))}


def load_tensors(path: Path | str) -> dict[str, torch.Tensor]:
    with safe_open(str(path), framework="pt") as f:
        return {k: f.get_tensor(k) for k in f.keys()}
