"""Deterministic procedural image generation.

The built-in renderer draws one parametric silhouette family per class
label (keyed by a stable hash of the label), rotated by a sampled pose
angle, shaded by a sampled lighting intensity and filled with seeded noise
texture over a seeded background. It is a pure function of the spec: the
same spec always produces byte-identical files. A file-based adapter lets
output from external 3D engines enter the pipeline through the same
sidecar format.
"""

from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import MetadataMismatch, MissingMetadata
from .manifest import (
    IMAGE_EXTENSIONS,
    PROVENANCE_PROCEDURAL,
    DatasetManifest,
    ImageRecord,
)
from .seeds import derive_seed, stable_label_hash

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderSpec:
    spec_id: str
    class_label: str
    count: int
    image_width: int = 640
    image_height: int = 480
    field_of_view: float = 90.0  # carried as metadata so specs round-trip to real 3D engines
    texture_seed: int = 0
    pose_range: tuple[float, float] = (0.0, 360.0)
    lighting_range: tuple[float, float] = (0.4, 1.0)
    master_seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0.0 < self.field_of_view < 180.0:
            raise ValueError("field_of_view must lie in (0, 180)")
        for name, (lo, hi) in (("pose_range", self.pose_range), ("lighting_range", self.lighting_range)):
            if lo > hi:
                raise ValueError(f"{name} must be an ordered (lo, hi) pair, got {(lo, hi)}")
        lo, hi = self.lighting_range
        if lo < 0.0 or hi > 1.0:
            raise ValueError("lighting_range must lie within [0, 1]")
        object.__setattr__(self, "pose_range", (float(self.pose_range[0]), float(self.pose_range[1])))
        object.__setattr__(self, "lighting_range", (float(self.lighting_range[0]), float(self.lighting_range[1])))

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "class_label": self.class_label,
            "count": self.count,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "field_of_view": self.field_of_view,
            "texture_seed": self.texture_seed,
            "pose_range": list(self.pose_range),
            "lighting_range": list(self.lighting_range),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RenderSpec":
        d = dict(d)
        if "pose_range" in d:
            d["pose_range"] = tuple(d["pose_range"])
        if "lighting_range" in d:
            d["lighting_range"] = tuple(d["lighting_range"])
        return cls(**d)


@dataclass(frozen=True)
class ImageParams:
    index: int
    pose_angle: float | None
    lighting_intensity: float | None
    texture_seed: int | None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "pose_angle": self.pose_angle,
            "lighting_intensity": self.lighting_intensity,
            "texture_seed": self.texture_seed,
        }


@dataclass(frozen=True)
class RenderBatch:
    spec: RenderSpec
    manifest: DatasetManifest
    per_image_params: tuple[ImageParams, ...]


def silhouette_params(class_label: str) -> dict:
    """Derive the silhouette family for a label from its stable hash.

    The family is a lobed radial curve r(t) = 1 - depth * (0.5 - 0.5*cos(k*t))**sharp,
    closed for any integer lobe count, so two labels almost surely yield
    visually distinct shapes (lobe count plus three continuous parameters).
    """
    h = stable_label_hash(class_label)
    lobes = 3 + h % 6
    depth = 0.08 + ((h >> 8) % 1000) / 999.0 * 0.65
    sharpness = 0.6 + ((h >> 18) % 1000) / 999.0 * 2.4
    aspect = 0.55 + ((h >> 28) % 1000) / 999.0 * 0.45
    return {"lobes": lobes, "depth": depth, "sharpness": sharpness, "aspect": aspect}


def _silhouette_polygon(class_label: str, pose_angle: float, width: int, height: int) -> list[tuple[float, float]]:
    p = silhouette_params(class_label)
    t = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
    r = 1.0 - p["depth"] * (0.5 - 0.5 * np.cos(p["lobes"] * t)) ** p["sharpness"]
    x = r * np.cos(t)
    y = p["aspect"] * r * np.sin(t)
    phi = np.deg2rad(pose_angle)
    xr = x * np.cos(phi) - y * np.sin(phi)
    yr = x * np.sin(phi) + y * np.cos(phi)
    scale = 0.38 * min(width, height)
    cx, cy = width / 2.0, height / 2.0
    return list(zip(cx + scale * xr, cy + scale * yr))


def _render_pixels(spec: RenderSpec, index: int, pose_angle: float,
                   lighting: float, texture_seed: int) -> np.ndarray:
    w, h = spec.image_width, spec.image_height

    mask_img = Image.new("L", (w, h), 0)
    ImageDraw.Draw(mask_img).polygon(
        _silhouette_polygon(spec.class_label, pose_angle, w, h), fill=255
    )
    mask = np.asarray(mask_img, dtype=np.float64) / 255.0

    t_rng = np.random.default_rng(texture_seed)
    texture = t_rng.random((h, w))
    hue = t_rng.random()
    tint = np.array(colorsys.hsv_to_rgb(hue, 0.35, 1.0))
    foreground = lighting * (0.55 + 0.45 * texture)[:, :, None] * tint[None, None, :]

    b_rng = np.random.default_rng(derive_seed(spec.master_seed, "background", index))
    background = (0.05 + 0.10 * b_rng.random((h, w)))[:, :, None] * np.array([0.9, 0.95, 1.0])

    img = background * (1.0 - mask[:, :, None]) + foreground * mask[:, :, None]
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def image_path(out_dir: str | Path, spec: RenderSpec, index: int) -> Path:
    return Path(out_dir) / spec.spec_id / spec.class_label / f"img_{index:05d}.png"


def sidecar_path(out_dir: str | Path, spec: RenderSpec) -> Path:
    return Path(out_dir) / spec.spec_id / "params.json"


def _write_sidecar(path: Path, params: list[ImageParams]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([p.to_dict() for p in params], fh, indent=2)
        fh.write("\n")


def sample_image_params(spec: RenderSpec, index: int) -> ImageParams:
    """Sample one image's parameters; depends only on the spec and the index."""
    rng = np.random.default_rng(derive_seed(spec.master_seed, "image", index))
    pose = float(rng.uniform(*spec.pose_range))
    lighting = float(rng.uniform(*spec.lighting_range))
    tex = derive_seed(spec.master_seed, spec.texture_seed, "texture", index)
    return ImageParams(index=index, pose_angle=pose, lighting_intensity=lighting, texture_seed=tex)


def render_batch(spec: RenderSpec, out_dir: str | Path) -> RenderBatch:
    """Emit ``spec.count`` images under ``<out>/<spec_id>/`` plus the params sidecar."""
    out_dir = Path(out_dir)
    params: list[ImageParams] = []
    records: list[ImageRecord] = []
    for index in range(spec.count):
        p = sample_image_params(spec, index)
        params.append(p)
        pixels = _render_pixels(spec, index, p.pose_angle, p.lighting_intensity, p.texture_seed)
        dest = image_path(out_dir, spec, index)
        dest.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels, "RGB").save(dest, format="PNG")
        records.append(ImageRecord(
            path=str(dest),
            class_label=spec.class_label,
            provenance=PROVENANCE_PROCEDURAL,
            render_spec_id=spec.spec_id,
            width=spec.image_width,
            height=spec.image_height,
        ))
    _write_sidecar(sidecar_path(out_dir, spec), params)

    manifest = DatasetManifest(
        records=tuple(records),
        class_set=(spec.class_label,),
        manifest_id=f"render-{spec.spec_id}",
    )
    return RenderBatch(spec=spec, manifest=manifest, per_image_params=tuple(params))


def import_external_batch(spec: RenderSpec, dir: str | Path) -> RenderBatch:
    """Adopt a directory of externally rendered images via its params sidecar.

    The actual image count wins over ``spec.count`` (logged); sidecar
    entries may carry nulls when the engine did not export a parameter.
    """
    src = Path(dir)
    sidecar = src / "params.json"
    if not sidecar.is_file():
        raise MissingMetadata(f"no params.json sidecar in {src}")
    with open(sidecar) as fh:
        raw_entries = json.load(fh)

    files = sorted(
        p for p in src.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if len(files) != len(raw_entries):
        raise MetadataMismatch(
            f"{len(files)} image files but {len(raw_entries)} sidecar entries in {src}"
        )
    if len(files) != spec.count:
        log.warning("import %s: spec declares %d images, found %d; using actual count",
                    spec.spec_id, spec.count, len(files))

    params = []
    records = []
    for index, (f, entry) in enumerate(zip(files, raw_entries)):
        entry = entry or {}
        params.append(ImageParams(
            index=index,
            pose_angle=entry.get("pose_angle"),
            lighting_intensity=entry.get("lighting_intensity"),
            texture_seed=entry.get("texture_seed"),
        ))
        with Image.open(f) as im:
            width, height = im.size
        records.append(ImageRecord(
            path=str(f),
            class_label=spec.class_label,
            provenance=PROVENANCE_PROCEDURAL,
            render_spec_id=spec.spec_id,
            width=width,
            height=height,
        ))

    manifest = DatasetManifest(
        records=tuple(records),
        class_set=(spec.class_label,),
        manifest_id=f"import-{spec.spec_id}",
    )
    return RenderBatch(spec=spec, manifest=manifest, per_image_params=tuple(params))
