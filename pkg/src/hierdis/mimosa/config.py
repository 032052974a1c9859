from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields, replace


class MimosaConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MimosaConfig:
    """Knobs for structure discovery.

    ``min_size_init`` and ``min_size_merged`` are fractions of the dataset
    size. ``cos_simil_thresh``/``contagion_num`` defaults suit smooth
    low-noise series; :meth:`for_images` gives the looser image preset.
    """

    initial_dim: int | None = None
    num_nearest_neighbors: int = 40
    ransac_frac: float = 2 / 3
    eig_cumsum_thresh: float = 0.95
    eig_decay_thresh: float = 4.0
    cos_simil_thresh: float = 0.99
    contagion_num: int = 5
    min_size_init: float = 0.0002
    min_size_merged: float = 0.02
    neighbor_lengthscale_mult: float = 10.0
    edge_detection: str = "direction"  # direction | convex-hull
    edge_tol: float = 1e-9
    enclosure_direction: str = "lower-to-higher"  # or higher-to-lower
    max_edge_match_dist: float | None = None  # None: similarity only
    ae_hidden: tuple = (256, 256)
    ae_epochs: int = 50
    ae_batch_size: int = 256
    ae_loss: str = "auto"  # auto | gaussian | bernoulli | mse
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ae_hidden", tuple(int(w) for w in self.ae_hidden))
        k = self.num_nearest_neighbors
        if self.initial_dim is not None:
            if self.initial_dim < 1:
                raise MimosaConfigError("initial_dim must be >= 1")
            if k <= self.initial_dim:
                raise MimosaConfigError("num_nearest_neighbors must exceed initial_dim")
        if k < 1:
            raise MimosaConfigError("num_nearest_neighbors must be positive")
        if not 0 < self.ransac_frac <= 1:
            raise MimosaConfigError("ransac_frac must lie in (0, 1]")
        if not 0 <= self.contagion_num < k:
            raise MimosaConfigError("contagion_num must be in [0, num_nearest_neighbors)")
        if not 0 <= self.cos_simil_thresh <= 1:
            raise MimosaConfigError("cos_simil_thresh must lie in [0, 1]")
        if self.edge_detection not in ("direction", "convex-hull"):
            raise MimosaConfigError(f"unknown edge_detection {self.edge_detection!r}")
        if self.enclosure_direction not in ("lower-to-higher", "higher-to-lower"):
            raise MimosaConfigError(f"unknown enclosure_direction {self.enclosure_direction!r}")
        if self.ae_loss not in ("auto", "gaussian", "bernoulli", "mse"):
            raise MimosaConfigError(f"unknown ae_loss {self.ae_loss!r}")
        for name in ("min_size_init", "min_size_merged"):
            if not 0 <= getattr(self, name) < 1:
                raise MimosaConfigError(f"{name} is a fraction of n in [0, 1)")

    @classmethod
    def for_images(cls, **kw) -> "MimosaConfig":
        return cls(**{"cos_simil_thresh": 0.95, "contagion_num": 3, **kw})

    def min_common_edge_frac(self, d: int) -> float:
        return 2.0 ** (-d - 1) + 2.0 ** (-d - 2)

    def with_(self, **kw) -> "MimosaConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ae_hidden"] = list(self.ae_hidden)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "MimosaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise MimosaConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as e:
            raise MimosaConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "MimosaConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))
