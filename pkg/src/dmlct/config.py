"""Training configuration, recipe presets, and the sectioned key = value file format."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data import PhantomSpec, Structure


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    epochs: int = 200
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 8
    crop: int = 128
    seed: int = 0
    # wavelet split
    wavelet_level: int = 6
    filter_name: str = "db3"
    hf_scale: float = 3000.0
    # losses
    tau: float = 0.15
    lambda_idt: float = 5.0
    lambda_m: float = 0.1
    num_anchor_locations: int = 256
    # networks
    base_channels: int = 64
    num_rrdb_blocks: int = 6
    growth_channels: int = 32
    embed_dim: int = 256
    proj_hidden_dim: int = 256
    proj_downsample: bool = False
    disc_base_channels: int = 64
    disc_num_blocks: int = 3
    # bookkeeping
    deterministic: bool = True
    debug_pairs: bool = False

    def __post_init__(self):
        positive = ("epochs", "lr", "batch_size", "crop", "wavelet_level", "hf_scale", "tau",
                    "num_anchor_locations", "base_channels", "num_rrdb_blocks", "growth_channels",
                    "embed_dim", "proj_hidden_dim", "disc_base_channels", "disc_num_blocks")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.lambda_idt < 0 or self.lambda_m < 0:
            raise ConfigError("loss weights must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.crop % 4:
            raise ConfigError(f"crop must be divisible by 4, got {self.crop}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    "aapm": {},
    "temporal": {
        "epochs": 100,
        "batch_size": 4,
        "wavelet_level": 5,
        "tau": 0.12,
        "proj_downsample": True,
    },
}

SECTIONS = {
    "train": ("epochs", "lr", "beta1", "beta2", "batch_size", "crop", "seed", "deterministic", "debug_pairs"),
    "wavelet": ("wavelet_level", "filter_name", "hf_scale"),
    "loss": ("tau", "lambda_idt", "lambda_m", "num_anchor_locations"),
    "model": ("base_channels", "num_rrdb_blocks", "growth_channels", "embed_dim", "proj_hidden_dim",
              "proj_downsample", "disc_base_channels", "disc_num_blocks"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, raw, types=_FIELD_TYPES):
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def _read_ini(text: str, source: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return parser


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat {key: value} from a sectioned file; keys must be TrainConfig fields."""
    parser = _read_ini(text, source)
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{source}: key {key!r} does not belong in [{section}]")
            out[key] = _coerce(key, value)
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip().split(".")[-1]
        out[key] = _coerce(key, value)
    return out


def resolve_config(preset: str | None = None, config_path=None, overrides=None) -> TrainConfig:
    """defaults < preset < config file < overrides."""
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        values.update(parse_config_text(path.read_text(), str(path)))
    values.update(parse_overrides(overrides))
    return TrainConfig(**values)


def config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**{k: _coerce(k, v) for k, v in d.items()})


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {getattr(cfg, key)!r}" if isinstance(getattr(cfg, key), float)
                         else f"{key} = {getattr(cfg, key)}")
        lines.append("")
    return "\n".join(lines)


# -- phantom spec files ---------------------------------------------------------

_PHANTOM_TYPES = {f.name: f.type for f in fields(PhantomSpec) if f.name != "structures"}
_PHANTOM_TYPES.update({"n_ld": "int", "n_hd": "int"})


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad number list for {key}: {text!r}") from None


def parse_phantom_text(text: str, source: str = "<phantom>") -> tuple[PhantomSpec, int, int]:
    """``[phantom]`` scalars plus optional ``[structure NAME]`` sections.

    Returns ``(spec, n_ld, n_hd)``; the default anatomy is used when no
    structure sections are given.
    """
    parser = _read_ini(text, source)
    if "phantom" not in parser:
        raise ConfigError(f"{source}: missing [phantom] section")
    values = {"n_ld": 16, "n_hd": 16}
    for key, value in parser.items("phantom"):
        values[key] = _coerce(key, value, _PHANTOM_TYPES)
    structures = []
    for section in parser.sections():
        if section == "phantom":
            continue
        if not section.startswith("structure"):
            raise ConfigError(f"{source}: unknown section [{section}]")
        sec = parser[section]
        missing = {"shape", "center", "dims", "hu_value"} - set(sec)
        extra = set(sec) - {"shape", "center", "dims", "hu_value"}
        if missing or extra:
            raise ConfigError(f"{source}: [{section}] missing {sorted(missing)} / unknown {sorted(extra)}")
        center = _floats(sec["center"], "center")
        if len(center) != 2:
            raise ConfigError(f"{source}: [{section}] center needs two values")
        structures.append(Structure(sec["shape"].strip(), center, _floats(sec["dims"], "dims"),
                                    float(sec["hu_value"])))
    n_ld, n_hd = values.pop("n_ld"), values.pop("n_hd")
    if n_ld < 1 or n_hd < 1:
        raise ConfigError("n_ld and n_hd must be >= 1")
    try:
        spec = PhantomSpec(structures=tuple(structures), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec, n_ld, n_hd


def format_phantom(spec: PhantomSpec, n_ld: int, n_hd: int) -> str:
    lines = ["[phantom]", f"n_ld = {n_ld}", f"n_hd = {n_hd}"]
    for name in _PHANTOM_TYPES:
        if name in ("n_ld", "n_hd"):
            continue
        lines.append(f"{name} = {getattr(spec, name)!r}")
    for i, s in enumerate(spec.structures):
        lines += ["", f"[structure {i}]", f"shape = {s.shape}",
                  "center = " + ", ".join(repr(float(v)) for v in s.center),
                  "dims = " + ", ".join(repr(float(v)) for v in s.dims),
                  f"hu_value = {float(s.hu_value)!r}"]
    return "\n".join(lines) + "\n"
