from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

REPORT_VERSION = "hierdis-scores/1"


def _clean(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, (np.floating,)):
        return _clean(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


@dataclass
class ScoreReport:
    factors: list = field(default_factory=list)
    learned: list = field(default_factory=list)
    r4: float | None = None
    r4c: float | None = None
    per_dim: list = field(default_factory=list)  # dicts: factor, r4, r4_match, r4c, r4c_match, flags
    pairwise: list = field(default_factory=list)  # rows over factors, cols over learned dims
    purity: float | None = None
    coverage: float | None = None
    h_error: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean({"version": REPORT_VERSION, **asdict(self)})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["factor", *self.learned])
            for name, row in zip(self.factors, self.pairwise):
                w.writerow([name, *(f"{v:.6f}" for v in row)])

    @classmethod
    def load_json(cls, path) -> "ScoreReport":
        with open(path) as f:
            doc = json.load(f)
        doc.pop("version", None)
        return cls(**doc)

    def summary(self) -> str:
        parts = []
        for k in ("purity", "coverage", "h_error", "r4", "r4c"):
            v = getattr(self, k)
            if v is not None:
                parts.append(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}")
        return " ".join(parts)
