"""Run configuration, profiles and run manifests.

A run config is a JSON object::

    {
      "seed": 7,
      "data": {"generator": {"n": 500, "beta": [1.5, -1.5, 1.0, -1.0, 0.8, 0.0],
                             "levels": [0, 0, 0, 0, 3, 2], "missing_rate": 0.3, "seed": 1}},
      "horizon_months": 72,
      "time_units": [1, 12, 24],
      "folds": 5,
      "baselines": {"imputers": ["mean", "knn"], "models": ["cox", "mlp"],
                    "knn_neighbors": 5, "cox_max_iter": 100, "mlp_hidden": [128, 128]},
      "ablation_unit": 12,
      "n_jobs": 1,
      "profiles": {"toy": {"model": {"ffn_hidden": 64}, "train": {"max_epochs": 60}}}
    }

``data`` is either ``{"csv": "<path>"}`` (relative to the config file) or
``{"generator": {...}}``. Every key is optional. ``profiles.<name>`` holds
overrides applied on top of that profile's built-in model and trainer
defaults, so the profile chosen on the command line decides the protocol.
"""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import DEFAULT_HORIZON_MONTHS, GeneratorSpec, generate_synthetic, n_bins, read_csv
from .errors import ConfigurationError
from .model import PROFILES, SurvivalModelConfig
from .training import TrainConfig

PROFILE_TRAIN = {
    # batch 32, lr 1e-4, 1500 epochs, patience 200 (stop) / 100 (LR)
    "paper": TrainConfig(),
    "toy": TrainConfig(batch_size=32, lr=1e-3, max_epochs=100, early_stop_patience=20,
                       lr_patience=10, lr_decay=0.1),
}

TIME_UNIT_NAMES = {"1m": 1.0, "1y": 12.0, "2y": 24.0}


def parse_time_unit(text) -> float:
    """'1m' -> 1, '1y' -> 12, '2y' -> 24, '6m' -> 6, '3' -> 3 (months)."""
    if isinstance(text, (int, float)):
        return float(text)
    text = str(text).strip().lower()
    if text in TIME_UNIT_NAMES:
        return TIME_UNIT_NAMES[text]
    try:
        if text.endswith("m"):
            return float(text[:-1])
        if text.endswith("y"):
            return 12.0 * float(text[:-1])
        return float(text)
    except ValueError:
        raise ConfigurationError(f"cannot parse time unit {text!r}") from None


def unit_label(unit_months: float) -> str:
    if unit_months % 12 == 0:
        years = int(unit_months // 12)
        return f"{years}-year"
    return f"{unit_months:g}-month"


@dataclass(frozen=True)
class BaselineConfig:
    imputers: tuple = ("mean", "knn")
    models: tuple = ("cox", "mlp")
    knn_neighbors: int = 5
    cox_max_iter: int = 100
    mlp_hidden: tuple = (128, 128)


@dataclass
class RunConfig:
    seed: int = 0
    profile: str = "toy"
    data: dict = field(default_factory=lambda: {"generator": {}})
    horizon_months: float = DEFAULT_HORIZON_MONTHS
    time_units: tuple = (1.0, 12.0, 24.0)
    folds: int = 5
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    ablation_unit: float = 12.0
    n_jobs: int = 1
    profiles: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        self.time_units = tuple(parse_time_unit(u) for u in self.time_units)
        for u in self.time_units + (parse_time_unit(self.ablation_unit),):
            n_bins(u, self.horizon_months)
        if self.folds < 2:
            raise ConfigurationError("folds must be at least 2")
        if not isinstance(self.baselines, BaselineConfig):
            raw = dict(self.baselines)
            unknown = set(raw) - {f.name for f in fields(BaselineConfig)}
            if unknown:
                raise ConfigurationError(f"unknown baseline keys {sorted(unknown)}")
            for key in ("imputers", "models", "mlp_hidden"):
                if key in raw:
                    raw[key] = tuple(raw[key])
            self.baselines = BaselineConfig(**raw)
        if set(self.data) - {"csv", "generator"} or len(self.data) != 1:
            raise ConfigurationError("data must hold exactly one of 'csv' or 'generator'")

    # -- resolution -------------------------------------------------------
    def overrides(self, section: str) -> dict:
        return dict(self.profiles.get(self.profile, {}).get(section, {}))

    def train_config(self, **changes) -> TrainConfig:
        try:
            cfg = replace(PROFILE_TRAIN[self.profile], **self.overrides("train"))
        except TypeError as exc:
            raise ConfigurationError(f"bad trainer override: {exc}") from None
        return replace(cfg, **changes)

    def model_config(self, T: int, d: int, seed: int = 0) -> SurvivalModelConfig:
        base = dict(PROFILES[self.profile])
        base.update(self.overrides("model"))
        try:
            return SurvivalModelConfig(T=T, d=d, seed=seed, **base)
        except TypeError as exc:
            raise ConfigurationError(f"bad model override: {exc}") from None

    def generator(self):
        raw = dict(self.data["generator"])
        n = int(raw.pop("n", 500))
        seed = int(raw.pop("seed", self.seed))
        names = raw.pop("names", None)
        for key in ("beta", "levels"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        try:
            spec = GeneratorSpec(**raw)
        except TypeError as exc:
            raise ConfigurationError(f"bad generator spec: {exc}") from None
        return n, spec, seed, names

    def load_cohort(self):
        if "csv" in self.data:
            return read_csv(self.csv_path())
        n, spec, seed, names = self.generator()
        return generate_synthetic(n, spec, seed, names)

    def csv_path(self) -> Path:
        p = Path(self.data["csv"])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def input_hash(self) -> str:
        h = hashlib.sha256()
        if "csv" in self.data:
            h.update(self.csv_path().read_bytes())
        else:
            h.update(json.dumps(self.data["generator"], sort_keys=True).encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def derive_seed(master: int, *tags) -> int:
    """Stable 32-bit child seed for (master, tag...)."""
    key = [int(t) if isinstance(t, (int, np.integer)) else int.from_bytes(hashlib.sha256(str(t).encode()).digest()[:4], "little")
           for t in tags]
    return int(np.random.SeedSequence(int(master), spawn_key=key).generate_state(1)[0])


def load_config(path=None, **overrides) -> RunConfig:
    raw = {}
    base_dir = "."
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        base_dir = str(path.parent)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    return RunConfig(base_dir=base_dir, **raw)


def _now():
    return datetime.now(timezone.utc).isoformat()


def start_manifest(out_dir, config: RunConfig, command: str, resolved: dict | None = None) -> dict:
    """Write ``manifest.json`` (input hash first, before any computation)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "master_seed": config.seed,
        "input_hash": config.input_hash(),
        "config": config.to_dict(),
        "resolved": resolved or {},
        "started": _now(),
        "finished": None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest


def finish_manifest(out_dir, manifest: dict, **extra) -> dict:
    manifest = dict(manifest, finished=_now(), **extra)
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest
