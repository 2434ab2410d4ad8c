"""Classifier training and prediction.

Two backbones: ``desk_small_conv`` is a compact convolutional net trained
end-to-end that finishes in seconds on a CPU; ``paper_vgg16_transfer``
builds the standard VGG16 convolutional stack from an externally supplied
weights file, freezes it, and trains only a leaky-ReLU classification
head. Training is seeded and, when deterministic mode is requested (the
default), bit-reproducible on CPU; otherwise the model artifact records a
nondeterminism flag.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .errors import ClassSetMismatch, EmptyClass, MissingPretrained
from .manifest import DatasetManifest
from .predictions import PredictionRow, PredictionTable
from .seeds import derive_seed

BACKBONE_SMALL = "desk_small_conv"
BACKBONE_VGG16 = "paper_vgg16_transfer"
_OPTIMIZERS = ("rmsprop", "adam", "sgd")

# the standard VGG16 convolutional configuration ("M" = max pool)
_VGG16_LAYERS = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
                 512, 512, 512, "M", 512, 512, 512, "M"]


def leaky_relu(x, slope: float):
    """x for x >= 0, slope * x for x < 0; continuous at 0. Accepts scalars or arrays."""
    if slope <= 0:
        raise ValueError("slope must be positive")
    arr = np.asarray(x, dtype=np.float64)
    out = np.where(arr >= 0, arr, slope * arr)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    optimizer: str = "rmsprop"
    leaky_slope: float = 0.01
    backbone: str = BACKBONE_SMALL
    batch_size: int = 32
    seed: int = 0
    input_size: tuple[int, int] = (64, 64)
    head_width: int = 256
    pretrained_weights: str | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {_OPTIMIZERS}")
        if self.backbone not in (BACKBONE_SMALL, BACKBONE_VGG16):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        object.__setattr__(self, "input_size", (int(self.input_size[0]), int(self.input_size[1])))

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "leaky_slope": self.leaky_slope,
            "backbone": self.backbone,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "input_size": list(self.input_size),
            "head_width": self.head_width,
            "pretrained_weights": self.pretrained_weights,
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "input_size" in d:
            d["input_size"] = tuple(d["input_size"])
        return cls(**d)


@dataclass(frozen=True)
class TrainingHistory:
    train_accuracy: tuple[float, ...]
    val_accuracy: tuple[float, ...]
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]

    def __post_init__(self):
        lengths = {len(self.train_accuracy), len(self.val_accuracy),
                   len(self.train_loss), len(self.val_loss)}
        if len(lengths) != 1:
            raise ValueError("all four history series must have equal length")
        for acc in (*self.train_accuracy, *self.val_accuracy):
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0, 1]")
        for loss in (*self.train_loss, *self.val_loss):
            if loss < 0.0:
                raise ValueError(f"loss {loss} is negative")

    def __len__(self) -> int:
        return len(self.train_accuracy)

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_acc", "val_acc", "train_loss", "val_loss"])
            for i in range(len(self)):
                writer.writerow([i + 1, repr(self.train_accuracy[i]), repr(self.val_accuracy[i]),
                                 repr(self.train_loss[i]), repr(self.val_loss[i])])
        return path

    @classmethod
    def load_csv(cls, path: str | Path) -> "TrainingHistory":
        rows = []
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            train_accuracy=tuple(float(r["train_acc"]) for r in rows),
            val_accuracy=tuple(float(r["val_acc"]) for r in rows),
            train_loss=tuple(float(r["train_loss"]) for r in rows),
            val_loss=tuple(float(r["val_loss"]) for r in rows),
        )


@dataclass(frozen=True)
class ModelArtifact:
    model_id: str
    class_set: tuple[str, ...]
    config: TrainConfig
    weights_path: str
    train_manifest_id: str
    nondeterministic: bool = False

    def to_dict(self) -> dict:
        d = {
            "model_id": self.model_id,
            "class_set": list(self.class_set),
            "config": self.config.to_dict(),
            "weights_path": self.weights_path,
            "train_manifest_id": self.train_manifest_id,
        }
        if self.nondeterministic:
            d["nondeterministic"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        return cls(
            model_id=d["model_id"],
            class_set=tuple(d["class_set"]),
            config=TrainConfig.from_dict(d["config"]),
            weights_path=d["weights_path"],
            train_manifest_id=d["train_manifest_id"],
            nondeterministic=d.get("nondeterministic", False),
        )

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def load_json(cls, path: str | Path) -> "ModelArtifact":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- model construction ------------------------------------------------------

def _build_small_conv(n_classes: int, slope: float) -> nn.Module:
    return nn.Sequential(
        nn.Conv2d(3, 16, 3, padding=1), nn.LeakyReLU(slope), nn.MaxPool2d(2),
        nn.Conv2d(16, 32, 3, padding=1), nn.LeakyReLU(slope), nn.MaxPool2d(2),
        nn.Conv2d(32, 64, 3, padding=1), nn.LeakyReLU(slope), nn.MaxPool2d(2),
        nn.AdaptiveAvgPool2d((4, 4)), nn.Flatten(),
        nn.Linear(64 * 16, 128), nn.LeakyReLU(slope), nn.Linear(128, n_classes),
    )


def _build_vgg16_features() -> nn.Sequential:
    layers: list[nn.Module] = []
    in_ch = 3
    for item in _VGG16_LAYERS:
        if item == "M":
            layers.append(nn.MaxPool2d(2))
        else:
            layers.append(nn.Conv2d(in_ch, int(item), 3, padding=1))
            layers.append(nn.ReLU(inplace=True))
            in_ch = int(item)
    return nn.Sequential(*layers)


class _Vgg16Transfer(nn.Module):
    """Frozen VGG16 convolutional stack plus a trainable leaky-ReLU head."""

    def __init__(self, n_classes: int, slope: float, head_width: int):
        super().__init__()
        self.features = _build_vgg16_features()
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d((2, 2)), nn.Flatten(),
            nn.Linear(512 * 4, head_width), nn.LeakyReLU(slope),
            nn.Linear(head_width, n_classes),
        )

    def forward(self, x):
        return self.head(self.features(x))


def _load_vgg16_weights(model: _Vgg16Transfer, weights_file: str | None) -> None:
    if not weights_file or not Path(weights_file).is_file():
        raise MissingPretrained(
            f"backbone {BACKBONE_VGG16!r} needs a pretrained weights file, got {weights_file!r}"
        )
    state = torch.load(weights_file, map_location="cpu", weights_only=True)
    features_state = {}
    for key, value in state.items():
        if key.startswith("features."):
            features_state[key[len("features."):]] = value
        elif key.split(".")[0].isdigit():
            features_state[key] = value
    model.features.load_state_dict(features_state)
    for param in model.features.parameters():
        param.requires_grad = False


def build_model(config: TrainConfig, n_classes: int) -> nn.Module:
    torch.manual_seed(derive_seed(config.seed, "init"))
    if config.backbone == BACKBONE_SMALL:
        return _build_small_conv(n_classes, config.leaky_slope)
    model = _Vgg16Transfer(n_classes, config.leaky_slope, config.head_width)
    _load_vgg16_weights(model, config.pretrained_weights)
    return model


def _make_optimizer(config: TrainConfig, params) -> torch.optim.Optimizer:
    if config.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=config.learning_rate)
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate)
    return torch.optim.SGD(params, lr=config.learning_rate)


# --- image loading -----------------------------------------------------------

def letterbox(im: Image.Image, size: tuple[int, int]) -> Image.Image:
    """Aspect-preserving resize onto a black canvas of the target size."""
    tw, th = size
    w, h = im.size
    scale = min(tw / w, th / h)
    nw, nh = max(1, round(w * scale)), max(1, round(h * scale))
    resized = im.convert("RGB").resize((nw, nh), Image.BILINEAR)
    canvas = Image.new("RGB", (tw, th), (0, 0, 0))
    canvas.paste(resized, ((tw - nw) // 2, (th - nh) // 2))
    return canvas


def _load_image_tensor(path: str, size: tuple[int, int]) -> np.ndarray:
    with Image.open(path) as im:
        boxed = letterbox(im, size)
    return np.asarray(boxed, dtype=np.uint8).transpose(2, 0, 1)


def _load_split(manifest: DatasetManifest, size: tuple[int, int],
                label_index: dict[str, int]) -> tuple[torch.Tensor, torch.Tensor]:
    images = np.empty((len(manifest), 3, size[1], size[0]), dtype=np.uint8)
    labels = np.empty(len(manifest), dtype=np.int64)
    for i, rec in enumerate(manifest.records):
        images[i] = _load_image_tensor(rec.path, size)
        labels[i] = label_index[rec.class_label]
    return torch.from_numpy(images), torch.from_numpy(labels)


# --- training ---------------------------------------------------------------

def _model_fingerprint(train_set: DatasetManifest, config: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(train_set.manifest_id.encode())
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    for rec in train_set.records:
        h.update(rec.path.encode())
        h.update(b"\x00")
    return h.hexdigest()[:10]


def train(train_set: DatasetManifest, val_set: DatasetManifest, config: TrainConfig,
          out_dir: str | Path, init_weights: str | None = None,
          model_id: str | None = None) -> tuple[ModelArtifact, TrainingHistory]:
    """Train a classifier on the train manifest, recording per-epoch history.

    ``init_weights`` warm-starts from a previous artifact's weights file
    instead of a fresh seeded initialization. Weights and the descriptor
    land under ``out_dir``.
    """
    if train_set.class_set != val_set.class_set:
        raise ClassSetMismatch(
            f"train classes {train_set.class_set} != val classes {val_set.class_set}"
        )
    for label, count in train_set.class_counts().items():
        if count == 0:
            raise EmptyClass(f"class {label!r} has no training records")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)

    label_index = {label: i for i, label in enumerate(train_set.class_set)}
    train_x, train_y = _load_split(train_set, config.input_size, label_index)
    val_x, val_y = _load_split(val_set, config.input_size, label_index)

    model = build_model(config, len(train_set.class_set))
    if init_weights is not None:
        model.load_state_dict(torch.load(init_weights, map_location="cpu", weights_only=True))
    optimizer = _make_optimizer(config, [p for p in model.parameters() if p.requires_grad])
    loss_fn = nn.CrossEntropyLoss()
    shuffle_gen = torch.Generator().manual_seed(derive_seed(config.seed, "shuffle"))

    train_acc, val_acc, train_loss, val_loss = [], [], [], []
    n = len(train_x)
    for _ in range(config.epochs):
        model.train()
        perm = torch.randperm(n, generator=shuffle_gen)
        running_loss = 0.0
        running_correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch_x = train_x[idx].float() / 255.0
            batch_y = train_y[idx]
            optimizer.zero_grad()
            logits = model(batch_x)
            loss = loss_fn(logits, batch_y)
            loss.backward()
            optimizer.step()
            running_loss += loss.item() * len(idx)
            running_correct += int((logits.argmax(dim=1) == batch_y).sum())
        train_loss.append(running_loss / n)
        train_acc.append(running_correct / n)

        ep_val_loss, ep_val_acc = _evaluate(model, val_x, val_y, loss_fn, config.batch_size)
        val_loss.append(ep_val_loss)
        val_acc.append(ep_val_acc)

    history = TrainingHistory(
        train_accuracy=tuple(train_acc),
        val_accuracy=tuple(val_acc),
        train_loss=tuple(train_loss),
        val_loss=tuple(val_loss),
    )

    if model_id is None:
        model_id = f"m{_model_fingerprint(train_set, config)}"
    weights_path = out_dir / f"model_{model_id}.pt"
    torch.save(model.state_dict(), weights_path)
    artifact = ModelArtifact(
        model_id=model_id,
        class_set=train_set.class_set,
        config=config,
        weights_path=str(weights_path),
        train_manifest_id=train_set.manifest_id,
        nondeterministic=not config.deterministic,
    )
    artifact.save_json(out_dir / f"model_{model_id}.json")
    return artifact, history


@torch.no_grad()
def _evaluate(model: nn.Module, x: torch.Tensor, y: torch.Tensor,
              loss_fn, batch_size: int) -> tuple[float, float]:
    model.eval()
    total_loss = 0.0
    correct = 0
    for start in range(0, len(x), batch_size):
        batch_x = x[start:start + batch_size].float() / 255.0
        batch_y = y[start:start + batch_size]
        logits = model(batch_x)
        total_loss += loss_fn(logits, batch_y).item() * len(batch_x)
        correct += int((logits.argmax(dim=1) == batch_y).sum())
    return total_loss / len(x), correct / len(x)


# --- prediction --------------------------------------------------------------

def softmax_scores(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64; every row sums to 1."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def argmax_label(scores, class_set: tuple[str, ...]) -> str:
    """Predicted label: first index attaining the maximum score."""
    return class_set[int(np.argmax(np.asarray(scores)))]


def load_model(artifact: ModelArtifact) -> nn.Module:
    model = build_model(artifact.config, len(artifact.class_set))
    model.load_state_dict(
        torch.load(artifact.weights_path, map_location="cpu", weights_only=True)
    )
    model.eval()
    return model


@torch.no_grad()
def predict(artifact: ModelArtifact, eval_set: DatasetManifest,
            batch_size: int = 128) -> PredictionTable:
    """Score every record of the eval manifest; unreadable images become error rows."""
    unknown = set(eval_set.class_set) - set(artifact.class_set)
    if unknown:
        raise ClassSetMismatch(
            f"eval manifest brings classes the model never saw: {sorted(unknown)}"
        )
    model = load_model(artifact)
    size = artifact.config.input_size

    rows: list[PredictionRow | None] = [None] * len(eval_set.records)
    pending_idx: list[int] = []
    pending_imgs: list[np.ndarray] = []

    def flush():
        if not pending_idx:
            return
        batch = torch.from_numpy(np.stack(pending_imgs)).float() / 255.0
        logits = model(batch).numpy()
        scores = softmax_scores(logits)
        for j, rec_index in enumerate(pending_idx):
            rec = eval_set.records[rec_index]
            row_scores = tuple(float(v) for v in scores[j])
            rows[rec_index] = PredictionRow(
                path=rec.path,
                true_label=rec.class_label,
                predicted_label=argmax_label(row_scores, artifact.class_set),
                scores=row_scores,
            )
        pending_idx.clear()
        pending_imgs.clear()

    for i, rec in enumerate(eval_set.records):
        try:
            img = _load_image_tensor(rec.path, size)
        except Exception as exc:
            rows[i] = PredictionRow(
                path=rec.path, true_label=rec.class_label,
                predicted_label=None, scores=(), error=str(exc),
            )
            continue
        pending_idx.append(i)
        pending_imgs.append(img)
        if len(pending_idx) >= batch_size:
            flush()
    flush()

    return PredictionTable(class_set=artifact.class_set, rows=tuple(rows))
