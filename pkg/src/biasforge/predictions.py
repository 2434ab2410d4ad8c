"""Prediction tables exchanged between the trainer and the evaluators."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class PredictionRow:
    path: str
    true_label: str
    predicted_label: str | None
    scores: tuple[float, ...]
    error: str | None = None

    @property
    def correct(self) -> bool:
        return self.error is None and self.predicted_label == self.true_label


@dataclass(frozen=True)
class PredictionTable:
    class_set: tuple[str, ...]
    rows: tuple[PredictionRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def by_path(self) -> dict[str, PredictionRow]:
        return {r.path: r for r in self.rows}

    def accuracy(self) -> float:
        if not self.rows:
            return 0.0
        return sum(r.correct for r in self.rows) / len(self.rows)

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "true_label", "predicted_label", "error"]
                            + [f"score_{c}" for c in self.class_set])
            for r in self.rows:
                writer.writerow([r.path, r.true_label, r.predicted_label or "", r.error or ""]
                                + [repr(s) for s in r.scores])
        return path

    def to_dict(self) -> dict:
        return {
            "class_set": list(self.class_set),
            "rows": [
                {
                    "path": r.path,
                    "true_label": r.true_label,
                    "predicted_label": r.predicted_label,
                    "scores": list(r.scores),
                    "error": r.error,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionTable":
        return cls(
            class_set=tuple(d["class_set"]),
            rows=tuple(
                PredictionRow(
                    path=r["path"],
                    true_label=r["true_label"],
                    predicted_label=r.get("predicted_label"),
                    scores=tuple(r.get("scores", ())),
                    error=r.get("error"),
                )
                for r in d["rows"]
            ),
        )

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def load_json(cls, path: str | Path) -> "PredictionTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
