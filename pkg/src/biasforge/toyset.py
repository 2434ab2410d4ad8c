"""Desk-scale shape corpora for experiments, demos and tests.

Builds an image-folder dataset (``<root>/<class>/*.png``) out of the
procedural renderer, optionally crippling one class: fewer images, heavily
blended with noise. That simulates the situation the pipeline exists for:
a class whose training data is scarce and low quality, evaluated against a
clean target distribution.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np
from PIL import Image

from .render import RenderSpec, render_batch
from .seeds import derive_seed


def degrade_image(path: Path, noise_level: float, seed: int) -> None:
    """Blend an image toward seeded uniform noise in place."""
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = rng.random(pixels.shape) * 255.0
    mixed = (1.0 - noise_level) * pixels + noise_level * noise
    Image.fromarray(mixed.round().astype(np.uint8), "RGB").save(path, format="PNG")


def build_shape_corpus(root: str | Path, classes: list[str], per_class: int, seed: int,
                       image_size: tuple[int, int] = (64, 64),
                       degraded_class: str | None = None,
                       degraded_count: int | None = None,
                       noise_level: float = 0.85) -> Path:
    """Render ``per_class`` images for each class into ``<root>/<class>/``.

    When ``degraded_class`` is set, that class gets only ``degraded_count``
    images, each blended ``noise_level`` of the way toward noise.
    """
    root = Path(root)
    staging = root / ".staging"
    for label in classes:
        count = per_class
        if label == degraded_class:
            count = degraded_count if degraded_count is not None else per_class
        spec = RenderSpec(
            spec_id=f"corpus-{label}",
            class_label=label,
            count=count,
            image_width=image_size[0],
            image_height=image_size[1],
            texture_seed=derive_seed(seed, label, "texture"),
            pose_range=(0.0, 360.0),
            lighting_range=(0.4, 1.0),
            master_seed=derive_seed(seed, label),
        )
        batch = render_batch(spec, staging)
        dest_dir = root / label
        dest_dir.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(batch.manifest.records):
            dest = dest_dir / Path(rec.path).name
            shutil.move(rec.path, dest)
            if label == degraded_class:
                degrade_image(dest, noise_level, derive_seed(seed, label, "degrade", i))
    shutil.rmtree(staging)
    return root
