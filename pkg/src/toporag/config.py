"""Run configuration: one JSON document, overridable from the command line."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "toporag-out",
    "dataset": {"name": None, "nodes": None, "edges": None, "min_text_words": 0},
    "split": {"partial_fraction": 0.1, "strategy": "random", "starting_words": 3},
    "sample": None,
    "diffusion": {"K": 3, "alphas": [], "projection_dim": 128},
    "wave": {"scale": 1.0, "t_min": 0.0, "t_max": 100.0, "n_points": 50, "max_nodes": 5000},
    "embedding": {"endpoint": "fallback", "model": "fallback-char3", "dimension": 256, "batch_size": 32},
    "generation": {
        "endpoint": "mock",
        "model": "mock",
        "temperature": 0.0,
        "word_budget": None,
        "limit_tokens": 4096,
        "sample_size": 500,
    },
    "retrieval": {"k": 3, "offset": 0, "index_k": 64, "topo_kind": "proximity", "epsilon": 1e-6},
    "analysis": {"selection": "all_unordered_no_self", "pair_count": 1_000_000, "bins": 10, "layer_sweep": 0},
    "evaluation": {"seeds": [0, 1, 2], "link_prediction": False},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    data: dict
    base_dir: Path

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None) -> RunConfig:
        raw: dict = {}
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                raw = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
            base = path.parent.resolve()
        data = _merge(DEFAULTS, raw)
        data = _merge(data, overrides or {})
        cfg = cls(data, base)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def output_dir(self) -> Path:
        out = Path(self.data["output_dir"])
        return out if out.is_absolute() else (Path.cwd() / out)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        if self.data.get("seed") is None:
            raise ConfigError("a global seed is required")
        ds = self.data["dataset"]
        for key in ("nodes", "edges"):
            if ds.get(key) is not None and not self.resolve(ds[key]).exists():
                raise ConfigError(f"dataset.{key} not found: {self.resolve(ds[key])}")

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage seed: global seed plus a hash of the stage name, mod 2**32."""
    h = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")
    return (int(seed) + h) % 2**32


def mini_config_path() -> Path:
    """Path of the bundled mini-fixture configuration."""
    return Path(str(resources.files("toporag") / "data" / "mini" / "config.json"))
