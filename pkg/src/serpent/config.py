"""Run configuration: TOML file + dotted-key command-line overrides.

Precedence is defaults < file < command line. Unknown sections or keys are
hard errors. Every key, its default, and its unit appear in `serpent
--help` (rendered by describe_keys)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:
    import tomli as tomllib

from .arch import SerpentConfig
from .harness import DataError, DegradationSpec, TrainConfig


class MismatchError(RuntimeError):
    """A checkpoint's architecture echo disagrees with the requested config."""


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = ""


@dataclass(frozen=True)
class RunConfig:
    model: SerpentConfig
    train: TrainConfig
    degrade: DegradationSpec
    paths: Paths


SECTIONS = {
    "model": SerpentConfig,
    "train": TrainConfig,
    "degrade": DegradationSpec,
    "paths": Paths,
}

# key -> (unit, description), one entry per config key
KEY_DOCS = {
    "model.patch_size": ("px", "patchifier patch width/height P; variants B/L/H are P=4/2/1"),
    "model.embed_dim": ("channels", "embedding width D after the patchifier"),
    "model.depth": ("blocks", "VSS blocks stacked per stage"),
    "model.num_scales": ("stages", "resolution scales (num_scales-1 down/up stages + bottleneck)"),
    "model.state_ratio": ("ratio", "scan state size as a fraction of stage channels (floor 1)"),
    "model.in_channels": ("channels", "image channels (3 RGB, 1 grayscale)"),
    "train.epochs": ("epochs", "training epochs"),
    "train.learning_rate": ("1/step", "Adam learning rate"),
    "train.batch_size": ("images", "images per optimizer step (gradients accumulate)"),
    "train.beta1": ("-", "Adam first-moment decay"),
    "train.beta2": ("-", "Adam second-moment decay"),
    "train.adam_eps": ("-", "Adam denominator epsilon"),
    "train.loss": ("-", "training loss (pixel 'l1')"),
    "train.crop": ("px", "square training crop size"),
    "train.augment": ("-", "random crop position + horizontal/vertical flips"),
    "train.seed": ("-", "training RNG seed (shuffle/crops/flips)"),
    "degrade.kernel_size": ("px", "Gaussian blur kernel size, odd"),
    "degrade.blur_sigma": ("px", "blur standard deviation; 0 means kernel_size/6"),
    "degrade.noise_sigma": ("intensity", "additive Gaussian noise sigma on the [0,1] scale"),
    "degrade.seed": ("-", "degradation seed; per-image streams derive from it"),
    "degrade.clamp": ("-", "clamp degraded images to [0,1]"),
    "paths.data_dir": ("path", "directory of PNG images"),
    "paths.out_dir": ("path", "output directory for logs/checkpoints/reports"),
    "paths.checkpoint": ("path", "checkpoint to evaluate (eval only)"),
}


def default_config() -> RunConfig:
    return RunConfig(model=SerpentConfig(), train=TrainConfig(), degrade=DegradationSpec(), paths=Paths())


def _coerce(section: str, key: str, value, target_type) -> object:
    dotted = f"{section}.{key}"
    if target_type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise DataError(f"{dotted}: expected true/false, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or (isinstance(value, float) and not float(value).is_integer()):
            raise DataError(f"{dotted}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise DataError(f"{dotted}: expected an integer, got {value!r}") from None
    if target_type is float:
        if isinstance(value, bool):
            raise DataError(f"{dotted}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise DataError(f"{dotted}: expected a number, got {value!r}") from None
    if target_type is str:
        if not isinstance(value, str):
            raise DataError(f"{dotted}: expected a string, got {value!r}")
        return value
    raise DataError(f"{dotted}: unsupported config field type {target_type}")


def _field_types(cls) -> dict[str, type]:
    types = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, type) else {"int": int, "float": float, "str": str, "bool": bool}.get(str(f.type))
        if t is None:
            raise DataError(f"unsupported field annotation on {cls.__name__}.{f.name}")
        types[f.name] = t
    return types


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional TOML file, and overrides."""
    values: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}

    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise DataError(f"cannot parse {p}: {exc}") from exc
        for section, body in raw.items():
            if section not in SECTIONS:
                raise DataError(f"unknown config section [{section}]; expected {sorted(SECTIONS)}")
            if not isinstance(body, dict):
                raise DataError(f"config section [{section}] must be a table")
            types = _field_types(SECTIONS[section])
            for key, value in body.items():
                if key not in types:
                    raise DataError(f"unknown config key {section}.{key}; valid: {sorted(types)}")
                values[section][key] = _coerce(section, key, value, types[key])

    for item in overrides or []:
        if "=" not in item:
            raise DataError(f"override {item!r} is not of the form section.key=value")
        dotted, _, raw_value = item.partition("=")
        if "." not in dotted:
            raise DataError(f"override key {dotted!r} must be section.key")
        section, _, key = dotted.partition(".")
        if section not in SECTIONS:
            raise DataError(f"unknown config section {section!r} in override {item!r}")
        types = _field_types(SECTIONS[section])
        if key not in types:
            raise DataError(f"unknown config key {dotted}; valid: {sorted(types)}")
        values[section][key] = _coerce(section, key, raw_value, types[key])

    try:
        return RunConfig(**{s: cls(**values[s]) for s, cls in SECTIONS.items()})
    except DataError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def describe_keys() -> str:
    """Render every config key with its default and unit (the --help contract)."""
    lines = ["configuration keys (defaults < config file < key=value overrides):"]
    for section, cls in SECTIONS.items():
        defaults = cls()
        for f in dataclasses.fields(cls):
            dotted = f"{section}.{f.name}"
            unit, doc = KEY_DOCS[dotted]
            lines.append(f"  {dotted:<24} default={getattr(defaults, f.name)!r:<10} [{unit}] {doc}")
    return "\n".join(lines)


def check_echo(requested: SerpentConfig, echo: dict):
    """Compare a checkpoint's architecture echo against the requested model config."""
    for f in dataclasses.fields(SerpentConfig):
        want = getattr(requested, f.name)
        got = echo.get(f.name)
        if isinstance(want, float):
            same = got is not None and abs(want - got) < 1e-12
        else:
            same = want == got
        if not same:
            raise MismatchError(
                f"checkpoint/config mismatch on model.{f.name}: checkpoint has {got!r}, config wants {want!r}"
            )
