"""Model/training configuration and its plain ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

MODALITIES = ("t", "a", "v")
_CENTER_NAMES = {"text": "t", "audio": "a", "acoustic": "a", "visual": "v"}


class ConfigError(ValueError):
    pass


@dataclass
class TmrnConfig:
    # architecture
    d: int = 16
    n_layers: int = 3
    lstm_hidden: int = 0  # 0 -> d // 2
    d_ff: int = 0  # 0 -> 4 * d
    heads: int = 1
    dropout: float = 0.0
    ln_eps: float = 1e-5
    d_t: int = 12
    d_a: int = 8
    d_v: int = 10
    # ablation switches
    center_modality: str = "text"
    drop_audio: bool = False
    drop_visual: bool = False
    disable_tcca_cross: bool = False
    disable_tgsa: bool = False
    # training
    batch_size: int = 64
    epochs: int = 40
    lr: float = 1e-3
    seed: int = 42
    patience: int = 10
    clip_norm: float = 1.0
    # dataset files
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    # synthetic generator
    n_train: int = 2000
    n_valid: int = 300
    n_test: int = 500
    w_t: float = 0.7
    w_a: float = 0.15
    w_v: float = 0.15
    label_noise: float = 0.1
    noise_t: float = 0.3
    noise_a: float = 0.5
    noise_v: float = 0.5
    n_keys: int = 4
    key_strength: float = 3.0
    # N sweep
    n_list: str = "1,2,3,4"

    @property
    def hidden(self) -> int:
        return self.lstm_hidden or max(1, self.d // 2)

    @property
    def ff_width(self) -> int:
        return self.d_ff or 4 * self.d

    @property
    def center(self) -> str:
        return _CENTER_NAMES[self.center_modality]

    @property
    def modalities(self) -> tuple[str, ...]:
        """Modalities kept by the ablation switches, in t, a, v order."""
        dropped = {"a"} if self.drop_audio else set()
        if self.drop_visual:
            dropped.add("v")
        return tuple(m for m in MODALITIES if m not in dropped)

    @property
    def branches(self) -> tuple[str, ...]:
        return tuple(m for m in self.modalities if m != self.center)

    @property
    def widths(self) -> dict[str, int]:
        return {"t": self.d_t, "a": self.d_a, "v": self.d_v}

    def sweep_values(self) -> list[int]:
        try:
            return [int(x) for x in self.n_list.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"n_list must be comma-separated integers, got {self.n_list!r}") from exc

    def validate(self) -> TmrnConfig:
        checks = [
            (self.d > 0, "d must be positive"),
            (self.n_layers >= 1, "n_layers must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.lstm_hidden >= 0, "lstm_hidden must be >= 0"),
            (self.d_ff >= 0, "d_ff must be >= 0"),
            (self.heads == 1, "only single-head attention is implemented (heads = 1)"),
            (self.dropout == 0.0, "dropout is not implemented; keep dropout = 0"),
            (self.ln_eps > 0, "ln_eps must be positive"),
            (min(self.d_t, self.d_a, self.d_v) >= 1, "feature widths must be >= 1"),
            (self.center_modality in _CENTER_NAMES, f"center_modality must be one of {sorted(_CENTER_NAMES)}"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.clip_norm >= 0, "clip_norm must be >= 0 (0 disables clipping)"),
            (min(self.n_train, self.n_valid, self.n_test) >= 0, "sample counts must be >= 0"),
            (self.n_keys != 1 and self.n_keys >= 0, "n_keys must be 0 or >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.center not in self.modalities:
            raise ConfigError(f"center modality {self.center_modality!r} cannot be dropped")
        if not self.branches:
            raise ConfigError("at least one non-center modality must remain")
        self.sweep_values()
        return self

    # serialization -------------------------------------------------------

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: TmrnConfig | None = None) -> TmrnConfig:
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        updates = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key: {key!r}")
            updates[key] = _coerce(key, types[key], raw)
        return dataclasses.replace(base or cls(), **updates)

    @classmethod
    def from_text(cls, text: str, base: TmrnConfig | None = None) -> TmrnConfig:
        return cls.from_mapping(parse_key_values(text), base)

    @classmethod
    def from_file(cls, path: str | Path) -> TmrnConfig:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def parse_key_values(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, typ: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} ({typ}): {raw!r}") from exc
    return raw
