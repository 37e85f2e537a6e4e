"""Run configuration: named presets, key-value config files and command-line overrides.

A config file holds one ``key = value`` pair per line; ``#`` starts a comment. List
values (``xi``, ``weights``, ``eta_per_emitter``) are comma separated, a single ``xi``
value applies to every channel.
"""

from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Annotated, Any

from pydantic import ConfigDict, Field, TypeAdapter, ValidationError, model_validator
from pydantic.fields import FieldInfo

from .distributions import DEFAULT_CUTOFF
from .exceptions import IllegalParameterError
from .models import DetectorTree, EmitterEnsemble, FrozenModel, NoiseModel, Probability
from .simulator import SimulationConfig

PRESETS = MappingProxyType(
    {
        "paper": {
            "m": 1,
            "eta": 0.1,
            "lam": 0.0,
            "channels": 4,
            "xi": (0.6,),
            "rep_rate": 5e6,
            "window_ns": 40.0,
            "n_pulses": 1_000_000,
        },
        "cluster": {
            "m": 3,
            "eta": 0.1,
            "lam": 0.0,
            "channels": 4,
            "xi": (0.6,),
            "rep_rate": 5e6,
            "window_ns": 40.0,
            "n_pulses": 1_000_000,
        },
        "dark": {
            "m": 0,
            "lam": 0.0,
            "channels": 4,
            "xi": (0.6,),
            "rep_rate": 5e6,
            "window_ns": 40.0,
            "n_pulses": 1_000_000,
        },
    }
)


class RunConfig(FrozenModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    m: int = Field(default=1, ge=0)
    eta: Probability = 0.1
    eta_per_emitter: tuple[Probability, ...] | None = None
    lam: float = Field(default=0.0, ge=0.0)
    noise_rate_hz: float | None = Field(default=None, ge=0.0)
    channels: int = Field(default=4, ge=1, le=256)
    xi: tuple[Probability, ...] = (0.6,)
    weights: tuple[Probability, ...] | None = None
    n_pulses: int = Field(default=1_000_000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    rep_rate: float = Field(default=5e6, gt=0.0)
    window_ns: float = Field(default=40.0, gt=0.0)
    cutoff: float = Field(default=DEFAULT_CUTOFF, gt=0.0, lt=1.0)
    workers: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_channels(self) -> "RunConfig":
        if len(self.xi) not in (1, self.channels):
            raise ValueError(f"{len(self.xi)} efficiencies for {self.channels} channels")

        if self.weights is not None and len(self.weights) != self.channels:
            raise ValueError(f"{len(self.weights)} weights for {self.channels} channels")

        if self.noise_rate_hz is not None and self.lam > 0:
            raise ValueError("set either lam or noise_rate_hz, not both")

        return self

    @property
    def ensemble(self) -> EmitterEnsemble:
        return EmitterEnsemble(m=self.m, eta=self.eta, eta_per_emitter=self.eta_per_emitter)

    @property
    def tree(self) -> DetectorTree:
        xi = self.xi * self.channels if len(self.xi) == 1 else self.xi
        return DetectorTree(xi=xi, weights=self.weights or ())

    @property
    def noise(self) -> NoiseModel:
        if self.noise_rate_hz is not None:
            return NoiseModel.from_detected_rate(self.noise_rate_hz, self.rep_rate, self.tree)

        return NoiseModel(lam=self.lam)

    def to_simulation_config(self, *, emit_stream: bool = False) -> SimulationConfig:
        return SimulationConfig(
            ensemble=self.ensemble,
            noise=self.noise,
            tree=self.tree,
            n_pulses=self.n_pulses,
            seed=self.seed,
            emit_stream=emit_stream,
            rep_rate=self.rep_rate,
            window_ns=self.window_ns,
        )


class ConfigField:
    def __init__(self, name: str):
        if name not in RunConfig.model_fields:
            raise IllegalParameterError(f"unknown config key {name!r}")

        self.name = name

    @cached_property
    def field_info(self) -> FieldInfo:
        return RunConfig.model_fields[self.name]

    @cached_property
    def type_adapter(self) -> TypeAdapter[Any]:
        return TypeAdapter(Annotated[self.field_info.annotation, self.field_info])  # type: ignore

    @property
    def is_list(self) -> bool:
        return "tuple" in str(self.field_info.annotation)

    def cast(self, raw: str) -> Any:
        value: Any = raw.strip()
        if value.lower() in ("", "none"):
            value = None
        elif self.is_list:
            value = [part.strip() for part in value.split(",")]

        return self.type_adapter.validate_python(value)


def parse_config(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        key, sep, value = line.partition("=")
        if not sep:
            raise IllegalParameterError(f"expected 'key = value' on line {number}")

        key = key.strip()
        try:
            values[key] = ConfigField(key).cast(value)
        except IllegalParameterError as e:
            raise IllegalParameterError(f"{e} on line {number}") from e
        except ValidationError as e:
            raise IllegalParameterError(f"invalid value for {key!r} on line {number}: {e}") from e

    return values


def load_config(
    path: str | Path | None = None,
    *,
    preset: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Preset, then config file, then explicit overrides (None values are ignored)."""
    merged: dict[str, Any] = {}
    if preset is not None:
        try:
            merged.update(PRESETS[preset])
        except KeyError as e:
            raise IllegalParameterError(f"unknown preset {preset!r}, choose from {sorted(PRESETS)}") from e

    if path is not None:
        merged.update(parse_config(Path(path).read_text()))

    explicit = {key: value for key, value in (overrides or {}).items() if value is not None}
    merged.update(explicit)
    if "noise_rate_hz" in explicit and "lam" not in explicit:
        merged.pop("lam", None)

    return RunConfig.model_validate(merged)
