"""On-disk store of preprocessed samples: one ``.npy`` per sample plus ``index.csv``."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INDEX_FIELDS = ["sample_id", "body_id", "category", "label", "height", "width",
                "obsid", "filter", "hdu_index", "file"]


@dataclass
class StoredSample:
    sample_id: str
    body_id: str
    category: str
    label: int
    height: int
    width: int
    obsid: str
    filter: str
    hdu_index: int
    file: str


class SampleStore:
    def __init__(self, root):
        self.root = Path(root)
        self.entries: list[StoredSample] = []

    @property
    def index_path(self) -> Path:
        return self.root / "index.csv"

    def add(self, pixels: np.ndarray, sample_id: str, body_id: str, category: str, label: int,
            obsid: str = "", filter: str = "", hdu_index: int = 0) -> StoredSample:
        (self.root / "samples").mkdir(parents=True, exist_ok=True)
        rel = f"samples/{sample_id}.npy"
        np.save(self.root / rel, np.asarray(pixels, dtype=np.float32))
        entry = StoredSample(sample_id, body_id, category, int(label), int(pixels.shape[0]),
                             int(pixels.shape[1]), obsid, filter, int(hdu_index), rel)
        self.entries.append(entry)
        return entry

    def write_index(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.index_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=INDEX_FIELDS)
            writer.writeheader()
            for e in self.entries:
                writer.writerow(vars(e))
        return self.index_path

    @classmethod
    def open(cls, path) -> "SampleStore":
        path = Path(path)
        store = cls(path.parent if path.suffix == ".csv" else path)
        with open(store.index_path, newline="") as fh:
            for row in csv.DictReader(fh):
                store.entries.append(StoredSample(
                    row["sample_id"], row["body_id"], row["category"], int(row["label"]),
                    int(row["height"]), int(row["width"]), row["obsid"], row["filter"],
                    int(row["hdu_index"]), row["file"]))
        return store

    def load(self, entry: StoredSample) -> np.ndarray:
        return np.load(self.root / entry.file)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples stacked as N x H x W float32 data numbers, plus labels."""
        if not self.entries:
            return np.zeros((0, 0, 0), np.float32), np.zeros(0, np.int64)
        images = np.stack([self.load(e) for e in self.entries])
        labels = np.array([e.label for e in self.entries], dtype=np.int64)
        return images, labels
