"""Run configuration: flat TOML in, validated dataclass out, TOML back.

Every command resolves its configuration from (defaults, optional
config file, command-line flags) in that order, then writes the
resolved snapshot next to its outputs so a run can be reproduced from
the artifact directory alone.  Emission is deterministic: fields in
declaration order, floats in shortest round-trip form.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import tomli

from .distortions import list_distortions
from .training import KD_MODES

__all__ = ["RunConfig"]

DSM_SOURCES = ("gt", "grad", "pred")
LABEL_MODES = ("dsm", "area")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    image_size: int = 64
    patch_size: int = 8
    mix_max: int = 3
    dsm_source: str = "pred"
    label_mode: str = "dsm"
    distortions: tuple[str, ...] = ()
    n_samples: int = 2000
    lambda1: float = 0.1
    lambda2: float = 1.0
    kd: str = "on"
    jobs: int = 1
    predictor_epochs: int = 200
    predictor_lr: float = 0.05
    qep_epochs: int = 3
    qep_lr: float = 0.05
    probe_epochs: int = 50
    probe_lr: float = 0.1
    probe_train_frac: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "distortions", tuple(self.distortions))
        self.validate()

    def validate(self) -> None:
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.image_size < 16 or self.image_size % self.patch_size:
            raise ValueError("image_size must be >= 16 and a multiple of patch_size")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if not 1 <= self.mix_max <= 3:
            raise ValueError("mix_max must be in 1..3")
        if self.dsm_source not in DSM_SOURCES:
            raise ValueError(f"dsm_source must be one of {DSM_SOURCES}")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        known = set(list_distortions())
        for t in self.distortions:
            if t not in known:
                raise ValueError(f"unknown distortion type {t!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.kd not in KD_MODES:
            raise ValueError(f"kd must be one of {KD_MODES}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        for name in ("predictor_epochs", "qep_epochs", "probe_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("predictor_lr", "qep_lr", "probe_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.probe_train_frac < 1.0:
            raise ValueError("probe_train_frac must be in (0, 1)")

    def replace(self, **overrides) -> "RunConfig":
        """New config with non-None overrides applied."""
        fields = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **fields)

    def to_toml_str(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_emit_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml_str(cls, text: str) -> "RunConfig":
        data = tomli.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            return cls.from_toml_str(raw.decode("utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from exc

    def write_snapshot(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.resolved.toml"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_toml_str())
        return path


def _emit_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("non-finite config values are not writable")
        text = repr(v)
        return text if ("." in text or "e" in text or "E" in text) else text + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_emit_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit config value of type {type(v).__name__}")
