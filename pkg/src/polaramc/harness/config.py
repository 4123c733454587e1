"""Experiment configuration: built-in profiles plus line-based ``key = value`` files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from ..errors import InvalidArgumentError
from ..modem import FadingDistribution, ModulationScheme
from ..nn import TrainConfig

FEATURE_MODES = ("polar", "iq", "cumulants")

# fields that determine the generated frames and images
DATA_FIELDS = (
    "schemes", "frame_length", "train_per_class", "test_per_class", "snrs", "image_modes",
    "fading", "a_min", "a_max", "seed", "polar_resolution", "iq_resolution",
)


@dataclass
class ExperimentConfig:
    schemes: tuple = tuple(s.label for s in ModulationScheme)
    frame_length: int = 1000
    train_per_class: int = 5000  # per modulation and SNR
    test_per_class: int = 1000
    snrs: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    mode: str = "polar"
    image_modes: tuple = ("polar", "iq")
    fading: bool = False
    a_min: float = 0.5
    a_max: float = 2.0
    seed: int = 0
    polar_resolution: int = 36
    iq_resolution: int = 64
    val_fraction: float = 0.1
    threshold: float = 0.85
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    optimizer: str = "adam"
    ccn_lr: float = 1e-3
    ccn_freeze_epochs: int = 0
    ccn_warm_start: str = ""  # path to an AWGN-trained polar CNN checkpoint
    profile: str = "paper"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if min(self.frame_length, self.train_per_class, self.test_per_class) < 1:
            raise InvalidArgumentError("frame length and image counts must be >= 1")
        if not self.snrs:
            raise InvalidArgumentError("SNR list must not be empty")
        if self.mode not in FEATURE_MODES:
            raise InvalidArgumentError(f"mode must be one of {FEATURE_MODES}")
        for m in self.image_modes:
            if m not in ("polar", "iq"):
                raise InvalidArgumentError(f"image mode {m!r} is not polar or iq")
        for s in self.schemes:
            ModulationScheme.parse(s)
        if not 0 <= self.val_fraction < 1:
            raise InvalidArgumentError("val_fraction must be in [0, 1)")
        FadingDistribution(self.a_min, self.a_max)
        self.train_config()

    @property
    def scheme_list(self) -> list[ModulationScheme]:
        return [ModulationScheme.parse(s) for s in self.schemes]

    @property
    def fading_distribution(self) -> FadingDistribution:
        return FadingDistribution(self.a_min, self.a_max)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           optimizer=self.optimizer, seed=self.seed)

    def data_dict(self) -> dict:
        d = {k: getattr(self, k) for k in DATA_FIELDS}
        d["schemes"] = [ModulationScheme.parse(s).label for s in self.schemes]
        d["snrs"] = [float(s) for s in self.snrs]
        d["image_modes"] = list(self.image_modes)
        if not self.fading:
            d["a_min"] = d["a_max"] = None
        return d

    def data_hash(self) -> str:
        text = json.dumps(self.data_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            lines.append(f"{f.name} = {_fmt(value)}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


PROFILES = {
    "paper": {},
    "desk": {"train_per_class": 500, "test_per_class": 200, "profile": "desk"},
}


def profile(name: str) -> ExperimentConfig:
    if name not in PROFILES:
        raise InvalidArgumentError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return ExperimentConfig(**PROFILES[name])


def _coerce(name: str, raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise InvalidArgumentError(f"{name}: expected on/off, got {raw!r}")
    if isinstance(current, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if name == "snrs":
            return tuple(float(x) for x in items)
        return tuple(items)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines onto ``base`` (or onto the profile named by a ``profile`` key)."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((lineno, key, value))
    for _, key, value in pairs:
        if key == "profile":
            base = profile(value)
    cfg = base if base is not None else ExperimentConfig()
    names = {f.name for f in dataclasses.fields(cfg)}
    changes = {}
    for lineno, key, value in pairs:
        if key not in names:
            raise InvalidArgumentError(f"line {lineno}: unknown key {key!r}")
        try:
            changes[key] = _coerce(key, value, getattr(cfg, key))
        except ValueError as exc:
            raise InvalidArgumentError(f"line {lineno}: bad value for {key}: {exc}") from None
    return dataclasses.replace(cfg, **changes)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)
