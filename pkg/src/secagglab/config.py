"""Experiment configuration: a ``key = value`` text file.

Recognised keys (``#`` starts a comment)::

    protocol          accessfl | secagg | secaggplus | fedavg
    clients           integer >= 2 (>= 6 for accessfl)
    rounds            integer >= 1
    model             2nn-mnist-shape | synthetic:<dimension>
    dropout_schedule  path to a schedule file (see DropoutSchedule.parse)
    seed              integer
    key_size_bits     5 | 2048
    price_key_bits    re-price the byte ledger at this key size
    price_dimension   re-price the byte ledger at this model dimension
    scale, clip_range quantization overrides
    prg_profile       strict | salted
    history_mode      window | all
    max_retries       integer >= 0
    out               output directory
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .crypto import param_gen
from .errors import ConfigurationError
from .masking import SALTED, STRICT, QuantizationConfig
from .pairing import ALL_HISTORY, MIN_PARTICIPANTS, WINDOW
from .simnet import NO_DROPOUTS, DropoutSchedule

PROTOCOLS = ("accessfl", "secagg", "secaggplus", "fedavg")
MNIST_2NN_PARAMETERS = 784 * 200 + 200 + 200 * 200 + 200 + 200 * 10 + 10


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "accessfl"
    clients: int = 10
    rounds: int = 10
    model: str = "synthetic:16"
    dropout_schedule: str | None = None
    seed: int = 0
    key_size_bits: int = 5
    price_key_bits: int | None = None
    price_dimension: int | None = None
    scale: float = 2.0**16
    clip_range: float = 64.0
    prg_profile: str = STRICT
    history_mode: str = WINDOW
    max_retries: int = 3
    out: str = "out"

    @property
    def dimension(self) -> int:
        if self.model == "2nn-mnist-shape":
            return MNIST_2NN_PARAMETERS
        m = re.fullmatch(r"synthetic:(\d+)", self.model)
        if not m:
            raise ConfigurationError(f"model must be 2nn-mnist-shape or synthetic:<dim>, got {self.model!r}")
        return int(m.group(1))

    @property
    def quantization(self) -> QuantizationConfig:
        return QuantizationConfig(self.scale, self.clip_range)

    def schedule(self, base_dir: Path | None = None) -> DropoutSchedule:
        if not self.dropout_schedule:
            return NO_DROPOUTS
        path = Path(self.dropout_schedule)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            return DropoutSchedule.parse(path.read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read dropout schedule {path}: {exc.strerror}") from None

    def protocol_options(self) -> dict:
        if self.protocol == "accessfl":
            return {"prg_profile": self.prg_profile, "history_mode": self.history_mode,
                    "max_retries": self.max_retries}
        if self.protocol in ("secagg", "secaggplus"):
            return {"prg_profile": self.prg_profile}
        return {}

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.protocol not in PROTOCOLS:
            problems.append(f"protocol: unknown {self.protocol!r}, choose from {', '.join(PROTOCOLS)}")
        if self.rounds < 1:
            problems.append("rounds: must be >= 1")
        floor = MIN_PARTICIPANTS if self.protocol == "accessfl" else 2
        if self.clients < floor:
            problems.append(f"clients: {self.protocol} needs at least {floor}")
        try:
            if self.dimension < 1:
                problems.append("model: dimension must be >= 1")
        except ConfigurationError as exc:
            problems.append(str(exc))
        for key in ("key_size_bits", "price_key_bits"):
            value = getattr(self, key)
            if value is not None:
                try:
                    param_gen(value)
                except ConfigurationError as exc:
                    problems.append(f"{key}: {exc}")
        if self.price_dimension is not None and self.price_dimension < 1:
            problems.append("price_dimension: must be >= 1")
        if self.prg_profile not in (STRICT, SALTED):
            problems.append(f"prg_profile: choose {STRICT} or {SALTED}")
        if self.history_mode not in (WINDOW, ALL_HISTORY):
            problems.append(f"history_mode: choose {WINDOW} or {ALL_HISTORY}")
        if self.max_retries < 0:
            problems.append("max_retries: must be >= 0")
        try:
            self.quantization.check_headroom(self.clients)
        except ConfigurationError as exc:
            problems.append(f"scale/clip_range: {exc}")
        if problems:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems))
        return self


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int" or kind == "int | None":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config(text: str, base: ExperimentConfig = ExperimentConfig()) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return replace(base, **values)


PRESETS = {
    # 100 clients for 100 rounds; counts do not depend on the model size, so
    # the run uses a 1-element model and prices bytes for the 2NN shape
    "reference-tables": ExperimentConfig(
        protocol="accessfl", clients=100, rounds=100, model="synthetic:1",
        price_key_bits=2048, price_dimension=MNIST_2NN_PARAMETERS,
    ),
    "smoke": ExperimentConfig(protocol="accessfl", clients=10, rounds=5, model="synthetic:16"),
}


def load_config(source: str) -> tuple[ExperimentConfig, Path | None]:
    """Load ``preset:<name>`` or a config file; returns the config and its directory."""
    if source.startswith("preset:"):
        name = source.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        return PRESETS[name], None
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text), path.parent
