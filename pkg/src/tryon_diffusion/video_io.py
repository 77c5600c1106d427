"""Frame-directory storage for videos and masks.

A video is a directory of ``00000.png, 00001.png, ...`` plus ``meta.json``.
RGB values map ``[-1, 1] <-> [0, 255]``; masks are 8-bit single-channel images
read back with a threshold of 128.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

FRAME_RE = re.compile(r"^\d{5}\.png$")
META = "meta.json"


def to_uint8(x: torch.Tensor) -> np.ndarray:
    x = x.detach().to(torch.float64).clamp(-1, 1)
    return torch.round((x + 1) * 127.5).to(torch.uint8).numpy()


def from_uint8(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(a.astype(np.float32)) / 127.5 - 1


def frame_files(directory: Path | str) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if FRAME_RE.match(p.name))


def save_image(path: Path | str, image: torch.Tensor, mask: bool = False) -> None:
    """Write one ``(C, H, W)`` image; masks are stored as 0/255 grayscale."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if mask:
        a = ((image[0] >= 0.5).to(torch.uint8) * 255).numpy()
        Image.fromarray(a, mode="L").save(path)
    else:
        Image.fromarray(to_uint8(image).transpose(1, 2, 0), mode="RGB").save(path)


def load_image(path: Path | str, mask: bool = False) -> torch.Tensor:
    with Image.open(path) as im:
        if mask:
            a = np.asarray(im.convert("L"))
            return torch.from_numpy((a >= 128).astype(np.float32))[None]
        a = np.asarray(im.convert("RGB"))
    return from_uint8(a.transpose(2, 0, 1).copy())


def save_video(directory: Path | str, video: torch.Tensor, mask: bool = False,
               factor: int | None = None) -> None:
    """Write ``(F, C, H, W)`` frames and a JSON sidecar describing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for old in frame_files(directory):
        old.unlink()
    for i, frame in enumerate(video):
        save_image(directory / f"{i:05d}.png", frame, mask=mask)
    meta = {
        "kind": "mask" if mask else "rgb",
        "shape": list(video.shape),
        "value_range": [0, 1] if mask else [-1, 1],
        "factor": factor,
    }
    (directory / META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_video(directory: Path | str, mask: bool | None = None) -> torch.Tensor:
    directory = Path(directory)
    files = frame_files(directory)
    if not files:
        raise FileNotFoundError(f"no frames in {directory}")
    if mask is None:
        meta_path = directory / META
        mask = meta_path.exists() and json.loads(meta_path.read_text()).get("kind") == "mask"
    return torch.stack([load_image(p, mask=mask) for p in files])
