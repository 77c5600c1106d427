"""Try-on dataset records, manifest I/O and a synthetic data generator.

Synthetic records show a rectangular "person" drifting along a smooth seeded
trajectory over a gradient background, wearing a striped garment patch. Each
record also carries an alternate garment and the video re-rendered with it, so
try-on results can be scored against an exact target.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import video_io
from .conditioning import compose_agnostic
from .errors import ValidationError

CATEGORIES = ("upper-body", "lower-body", "dresses")
# garment rows as fractions of the person height
GARMENT_ROWS = {"upper-body": (0.12, 0.55), "lower-body": (0.5, 0.95), "dresses": (0.12, 0.9)}
MANIFEST_VERSION = 1

STREAMS = ("video_dir", "agnostic_dir", "mask_dir", "pose_dir")


@dataclass
class TryOnRecord:
    id: str
    category: str
    frame_count: int
    video_dir: str
    agnostic_dir: str
    mask_dir: str
    pose_dir: str
    cloth_path: str
    cloth_mask_path: str
    alt_cloth_path: str | None = None
    alt_cloth_mask_path: str | None = None
    swapped_video_dir: str | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "TryOnRecord":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"record {d.get('id', '?')}: unknown fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"record {d.get('id', '?')}: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DatasetManifest:
    records: list[TryOnRecord]
    resolution: tuple[int, int]
    source: str = "synthetic"
    root: Path = field(default=Path("."), compare=False)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "source": self.source,
            "resolution": list(self.resolution),
            "records": [r.to_dict() for r in self.records],
        }


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def _image_size(path: Path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as im:
        return im.size[1], im.size[0]


def validate_record(manifest: DatasetManifest, rec: TryOnRecord) -> None:
    if rec.category not in CATEGORIES:
        raise ValidationError(f"record {rec.id}: unknown category {rec.category!r}")
    if rec.frame_count < 1:
        raise ValidationError(f"record {rec.id}: frame_count must be >= 1")
    streams = [(name, getattr(rec, name)) for name in STREAMS]
    if rec.swapped_video_dir is not None:
        streams.append(("swapped_video_dir", rec.swapped_video_dir))
    for name, rel in streams:
        files = video_io.frame_files(manifest.path(rel))
        if len(files) != rec.frame_count:
            raise ValidationError(f"record {rec.id}: stream {name} has {len(files)} frames, "
                                  f"expected {rec.frame_count}")
        expected = [f"{i:05d}.png" for i in range(rec.frame_count)]
        if [f.name for f in files] != expected:
            raise ValidationError(f"record {rec.id}: stream {name} frames are not numbered 0..F-1")
        if _image_size(files[0]) != tuple(manifest.resolution):
            raise ValidationError(f"record {rec.id}: stream {name} resolution differs from manifest")
    images = [("cloth_path", rec.cloth_path), ("cloth_mask_path", rec.cloth_mask_path)]
    if rec.alt_cloth_path is not None:
        images += [("alt_cloth_path", rec.alt_cloth_path), ("alt_cloth_mask_path", rec.alt_cloth_mask_path)]
    for name, rel in images:
        if rel is None or not manifest.path(rel).is_file():
            raise ValidationError(f"record {rec.id}: stream {name} is missing")


def load_manifest(path: Path | str) -> DatasetManifest:
    """Read and fully validate a manifest; any partial record is rejected."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from None
    for key in ("records", "resolution"):
        if key not in raw:
            raise ValidationError(f"manifest {path} lacks {key!r}")
    manifest = DatasetManifest(
        records=[TryOnRecord.from_dict(r) for r in raw["records"]],
        resolution=tuple(raw["resolution"]),
        source=raw.get("source", "external"),
        root=path.parent,
    )
    ids = [r.id for r in manifest.records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate record ids in manifest")
    for rec in manifest.records:
        validate_record(manifest, rec)
    return manifest


@dataclass
class RecordData:
    """All streams of one record as tensors; videos are ``(F, C, H, W)``."""

    record: TryOnRecord
    video: torch.Tensor
    agnostic: torch.Tensor
    mask: torch.Tensor
    pose: torch.Tensor
    cloth: torch.Tensor
    cloth_mask: torch.Tensor
    alt_cloth: torch.Tensor | None = None
    alt_cloth_mask: torch.Tensor | None = None
    swapped: torch.Tensor | None = None


def load_record(manifest: DatasetManifest, rec: TryOnRecord) -> RecordData:
    p = manifest.path
    data = RecordData(
        record=rec,
        video=video_io.load_video(p(rec.video_dir), mask=False),
        agnostic=video_io.load_video(p(rec.agnostic_dir), mask=False),
        mask=video_io.load_video(p(rec.mask_dir), mask=True),
        pose=video_io.load_video(p(rec.pose_dir), mask=False),
        cloth=video_io.load_image(p(rec.cloth_path)),
        cloth_mask=video_io.load_image(p(rec.cloth_mask_path), mask=True),
    )
    if rec.alt_cloth_path:
        data.alt_cloth = video_io.load_image(p(rec.alt_cloth_path))
        data.alt_cloth_mask = video_io.load_image(p(rec.alt_cloth_mask_path), mask=True)
    if rec.swapped_video_dir:
        data.swapped = video_io.load_video(p(rec.swapped_video_dir), mask=False)
    return data


@dataclass
class TryOnSample:
    """One (person video, garment) pairing with the video it should produce."""

    video: torch.Tensor
    agnostic: torch.Tensor
    mask: torch.Tensor
    pose: torch.Tensor
    cloth: torch.Tensor
    cloth_mask: torch.Tensor
    name: str = ""

    def __len__(self):
        return self.video.shape[0]


def samples_from(records: list[RecordData], include_swaps: bool = False) -> list[TryOnSample]:
    out = []
    for r in records:
        out.append(TryOnSample(r.video, r.agnostic, r.mask, r.pose, r.cloth, r.cloth_mask,
                               name=f"{r.record.id}/own"))
        if include_swaps and r.swapped is not None:
            out.append(TryOnSample(r.swapped, r.agnostic, r.mask, r.pose, r.alt_cloth,
                                   r.alt_cloth_mask, name=f"{r.record.id}/alt"))
    return out


# --- synthetic generation -------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    center: tuple[float, float]
    amplitude: tuple[float, float]
    period: float
    phase: tuple[float, float]

    def at(self, t: float) -> tuple[float, float]:
        """Person center ``(y, x)`` at frame ``t``."""
        w = 2 * math.pi * t / self.period
        return (self.center[0] + self.amplitude[0] * math.sin(w + self.phase[0]),
                self.center[1] + self.amplitude[1] * math.sin(w + self.phase[1]))


@dataclass(frozen=True)
class GarmentDesign:
    base: tuple[int, int, int]
    stripe: tuple[int, int, int]
    period: int
    vertical: bool

    def render(self, h: int, w: int) -> np.ndarray:
        coord = np.arange(w) if self.vertical else np.arange(h)
        on = (coord // (self.period // 2)) % 2 == 1
        tex = np.empty((h, w, 3), dtype=np.uint8)
        tex[:] = self.base
        if self.vertical:
            tex[:, on] = self.stripe
        else:
            tex[on, :] = self.stripe
        return tex


def _random_design(rng: np.random.Generator) -> GarmentDesign:
    base = rng.integers(20, 236, size=3)
    stripe = (base + rng.integers(80, 176, size=3)) % 256
    return GarmentDesign(tuple(int(v) for v in base), tuple(int(v) for v in stripe),
                         int(rng.choice([8, 10, 12])), bool(rng.integers(0, 2)))


def person_box(traj: Trajectory, size: tuple[int, int], t: int) -> tuple[int, int]:
    cy, cx = traj.at(t)
    return int(round(cy - size[0] / 2)), int(round(cx - size[1] / 2))


def garment_rows(category: str, person_h: int) -> tuple[int, int]:
    r0, r1 = GARMENT_ROWS[category]
    return int(round(r0 * person_h)), int(round(r1 * person_h))


def _render(h, w, traj, person, skin, bg, rows, design, frames):
    """Return uint8 ``video (F,H,W,3)``, ``mask (F,H,W)`` and ``pose (F,H,W,3)``."""
    ph, pw = person
    g0, g1 = rows
    tex = design.render(g1 - g0, pw)
    ramp = np.linspace(0, 1, h)[:, None, None]
    background = np.round(bg[0] * (1 - ramp) + bg[1] * ramp).astype(np.uint8)
    background = np.broadcast_to(background, (h, w, 3))
    yy = np.linspace(0, 1, ph)[:, None]
    pose_colors = np.round(np.concatenate([255 * (1 - yy), 128 + 0 * yy, 255 * yy], 1)).astype(np.uint8)
    video = np.empty((frames, h, w, 3), np.uint8)
    mask = np.zeros((frames, h, w), np.uint8)
    pose = np.zeros((frames, h, w, 3), np.uint8)
    for t in range(frames):
        top, left = person_box(traj, person, t)
        frame = background.copy()
        frame[top:top + ph, left:left + pw] = skin
        frame[top + g0:top + g1, left:left + pw] = tex
        video[t] = frame
        mask[t, top + g0:top + g1, left:left + pw] = 1
        pose[t, top:top + ph, left:left + pw] = pose_colors[:, None, :]
    return video, mask, pose


def _cloth_image(h, w, design, rows, pw):
    gh = rows[1] - rows[0]
    canvas = np.full((h, w, 3), 255, np.uint8)
    cmask = np.zeros((h, w), np.uint8)
    y0, x0 = (h - gh) // 2, (w - pw) // 2
    canvas[y0:y0 + gh, x0:x0 + pw] = design.render(gh, pw)
    cmask[y0:y0 + gh, x0:x0 + pw] = 1
    return canvas, cmask


def _video_tensor(a: np.ndarray) -> torch.Tensor:
    return video_io.from_uint8(a.transpose(0, 3, 1, 2).copy())


def _mask_tensor(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(a.astype(np.float32))[:, None]


def generate_synthetic(out_dir: Path | str, num_records: int = 8, frames: int = 8, height: int = 64,
                       width: int = 48, seed: int = 0) -> DatasetManifest:
    """Render ``num_records`` synthetic records under ``out_dir`` and write ``manifest.json``."""
    if height % 16 or width % 16:
        raise ValueError(f"resolution {height}x{width} must be divisible by 16")
    if frames < 1 or num_records < 0:
        raise ValueError("frames must be >= 1 and num_records >= 0")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    designs = [_random_design(rng) for _ in range(num_records)]
    records = []
    for i in range(num_records):
        r = np.random.default_rng([seed, i])
        category = CATEGORIES[i % len(CATEGORIES)]
        person = (int(round(0.7 * height)), int(round(0.42 * width)))
        ay = float(r.uniform(0.5, 1.0) * (height - person[0]) / 2 - 1)
        ax = float(r.uniform(0.5, 1.0) * (width - person[1]) / 2 - 1)
        traj = Trajectory(center=(height / 2, width / 2), amplitude=(max(ay, 0.0), max(ax, 0.0)),
                          period=float(r.uniform(12, 24)), phase=(float(r.uniform(0, 2 * math.pi)),
                                                                  float(r.uniform(0, 2 * math.pi))))
        skin = r.integers(120, 230, size=3).astype(np.uint8)
        bg = (r.integers(0, 256, size=3).astype(np.float64), r.integers(0, 256, size=3).astype(np.float64))
        rows = garment_rows(category, person[0])
        design = designs[i]
        alt = designs[(i + 1) % num_records] if num_records > 1 else _random_design(r)

        video, mask, pose = _render(height, width, traj, person, skin, bg, rows, design, frames)
        swapped, _, _ = _render(height, width, traj, person, skin, bg, rows, alt, frames)
        cloth, cloth_mask = _cloth_image(height, width, design, rows, person[1])
        alt_cloth, alt_mask = _cloth_image(height, width, alt, rows, person[1])

        rid = f"{i:04d}"
        base = Path("records") / rid
        video_t, mask_t = _video_tensor(video), _mask_tensor(mask)
        agnostic_t = compose_agnostic(video_t, mask_t)
        root = out_dir / base
        video_io.save_video(root / "video", video_t)
        video_io.save_video(root / "agnostic", agnostic_t)
        video_io.save_video(root / "mask", mask_t, mask=True)
        video_io.save_video(root / "pose", _video_tensor(pose))
        video_io.save_video(root / "swapped", _video_tensor(swapped))
        video_io.save_image(root / "cloth.png", _video_tensor(cloth[None])[0])
        video_io.save_image(root / "cloth_mask.png", _mask_tensor(cloth_mask[None])[0], mask=True)
        video_io.save_image(root / "alt_cloth.png", _video_tensor(alt_cloth[None])[0])
        video_io.save_image(root / "alt_cloth_mask.png", _mask_tensor(alt_mask[None])[0], mask=True)
        records.append(TryOnRecord(
            id=rid, category=category, frame_count=frames,
            video_dir=str(base / "video"), agnostic_dir=str(base / "agnostic"),
            mask_dir=str(base / "mask"), pose_dir=str(base / "pose"),
            cloth_path=str(base / "cloth.png"), cloth_mask_path=str(base / "cloth_mask.png"),
            alt_cloth_path=str(base / "alt_cloth.png"), alt_cloth_mask_path=str(base / "alt_cloth_mask.png"),
            swapped_video_dir=str(base / "swapped"),
            meta={"trajectory": asdict(traj), "person_size": list(person), "garment_rows": list(rows),
                  "garment": asdict(design), "alt_garment": asdict(alt)},
        ))
    manifest = DatasetManifest(records, (height, width), "synthetic", root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
