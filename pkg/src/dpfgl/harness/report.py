"""Metrics reports (JSON object + one flat CSV row)."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dpnet import DpnetModel
from ..metrics import accuracy, auc
from ..synthdata import LABEL_FAKE, LABEL_REAL, ArrayDataset, select
from ..train import predict
from .checkpoint import write_atomic


@dataclass
class TechniqueMetrics:
    acc: float
    auc: float | None
    n_real: int
    n_fake: int


@dataclass
class MetricsReport:
    acc: float
    auc: float | None
    n_real: int
    n_fake: int
    per_technique: dict = field(default_factory=dict)
    seed: int = 0
    config_digest: str = ""
    model_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def csv_header(self) -> list[str]:
        cols = ["acc", "auc", "n_real", "n_fake", "seed", "config_digest", "model_digest"]
        for t in sorted(self.per_technique):
            cols += [f"{t}.acc", f"{t}.auc", f"{t}.n_real", f"{t}.n_fake"]
        return cols

    def csv_row(self) -> list:
        row = [self.acc, _na(self.auc), self.n_real, self.n_fake, self.seed, self.config_digest, self.model_digest]
        for t in sorted(self.per_technique):
            m = self.per_technique[t]
            row += [m.acc, _na(m.auc), m.n_real, m.n_fake]
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow([repr(v) if isinstance(v, float) else v for v in self.csv_row()])
        return buf.getvalue()

    def write(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        j, c = prefix.with_suffix(".json"), prefix.with_suffix(".csv")
        write_atomic(j, self.to_json().encode())
        write_atomic(c, self.to_csv().encode())
        return j, c


def _na(v):
    return "null" if v is None else v


def score_dataset(model: DpnetModel, data: ArrayDataset) -> TechniqueMetrics:
    scores = predict(model, data.images)
    return TechniqueMetrics(
        acc=accuracy(scores, data.labels),
        auc=auc(scores, data.labels),
        n_real=int(np.sum(data.labels == LABEL_REAL)),
        n_fake=int(np.sum(data.labels == LABEL_FAKE)),
    )


def evaluate(model: DpnetModel, records, techniques, split: str = "test", seed: int = 0,
             config_digest: str = "", model_digest: str = "") -> MetricsReport:
    """Overall metrics on ``techniques`` plus one breakdown entry per technique."""
    overall = score_dataset(model, select(records, split, list(techniques)))
    per = {t: score_dataset(model, select(records, split, [t])) for t in techniques}
    return MetricsReport(overall.acc, overall.auc, overall.n_real, overall.n_fake, per,
                         seed, config_digest, model_digest)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_json(path, obj) -> None:
    write_atomic(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())
