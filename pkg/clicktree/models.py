import math
from collections.abc import Iterable
from typing import Annotated, Any

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

from .exceptions import IllegalParameterError
from .utils import (
    MAX_ORDER,
    PROBABILITY_SLACK,
    parse_subset_label,
    subset_label,
    subset_mask,
    subsets,
)

Probability = Annotated[float, Field(ge=0.0, le=1.0)]
Subset = tuple[int, ...]


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True)


class EmitterEnsemble(FrozenModel):
    """M independent single-photon emitters seen through a collection efficiency."""

    m: int = Field(ge=0)
    eta: Probability = 1.0
    eta_per_emitter: tuple[Probability, ...] | None = None

    @model_validator(mode="after")
    def _check_per_emitter(self) -> "EmitterEnsemble":
        if self.eta_per_emitter is not None and len(self.eta_per_emitter) != self.m:
            raise ValueError(
                f"eta_per_emitter has {len(self.eta_per_emitter)} entries for {self.m} emitters"
            )

        return self

    @property
    def efficiencies(self) -> tuple[float, ...]:
        if self.eta_per_emitter is None:
            return (self.eta,) * self.m

        return self.eta_per_emitter

    @property
    def is_uniform(self) -> bool:
        return len(set(self.efficiencies)) <= 1

    @property
    def uniform_eta(self) -> float:
        if not self.is_uniform:
            raise IllegalParameterError("emitters are not coupled with a common efficiency")

        efficiencies = self.efficiencies
        return efficiencies[0] if efficiencies else self.eta


class DetectorTree(FrozenModel):
    """N click detectors behind a generalized beam-splitter.

    `xi[i]` is the detection efficiency of channel i and `weights[i]` the probability that
    a photon is routed to it. Weights default to the balanced 1/N split.
    """

    xi: tuple[Probability, ...] = Field(min_length=1)
    weights: tuple[Probability, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _default_weights(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("weights") and data.get("xi"):
            size = len(data["xi"])
            return {**data, "weights": (1.0 / size,) * size}

        return data

    @model_validator(mode="after")
    def _check_weights(self) -> "DetectorTree":
        if len(self.weights) != len(self.xi):
            raise ValueError(f"{len(self.weights)} weights for {len(self.xi)} channels")

        if abs(math.fsum(self.weights) - 1.0) > PROBABILITY_SLACK:
            raise ValueError(f"weights sum to {math.fsum(self.weights)!r}, not 1")

        return self

    @classmethod
    def uniform(cls, channels: int, xi: float) -> "DetectorTree":
        return cls(xi=(xi,) * channels)

    @property
    def channels(self) -> int:
        return len(self.xi)

    def balanced(self) -> bool:
        first_weight, first_xi = self.weights[0], self.xi[0]
        return all(
            math.isclose(w, first_weight, rel_tol=0.0, abs_tol=PROBABILITY_SLACK) for w in self.weights
        ) and all(math.isclose(x, first_xi, rel_tol=0.0, abs_tol=PROBABILITY_SLACK) for x in self.xi)

    def check_channel(self, channel: int) -> int:
        if not 0 <= channel < self.channels:
            raise IllegalParameterError(f"channel {channel} is out of range for {self.channels} channels")

        return channel

    def check_subset(self, channels: Iterable[int]) -> Subset:
        subset = tuple(sorted(self.check_channel(channel) for channel in channels))
        if len(set(subset)) != len(subset):
            raise IllegalParameterError(f"channel subset {subset} repeats a channel")

        return subset

    def efficiency(self, channels: Iterable[int]) -> float:
        """Probability that a single photon is routed into and detected by one of `channels`."""
        return math.fsum(self.weights[i] * self.xi[i] for i in self.check_subset(channels))

    @property
    def total_efficiency(self) -> float:
        return self.efficiency(range(self.channels))


class NoiseModel(FrozenModel):
    lam: float = Field(default=0.0, ge=0.0)

    @classmethod
    def from_detected_rate(cls, rate_hz: float, rep_rate: float, tree: DetectorTree) -> "NoiseModel":
        """Mean background photons per pulse from the detected background count rate."""
        if rate_hz < 0 or rep_rate <= 0:
            raise IllegalParameterError("rates must be nonnegative and the repetition rate positive")

        if rate_hz == 0:
            return cls(lam=0.0)

        efficiency = tree.total_efficiency
        if efficiency == 0:
            raise IllegalParameterError("a blind detector tree cannot register background counts")

        return cls(lam=rate_hz / (rep_rate * efficiency))


class PhotonNumberDistribution(FrozenModel):
    """Truncated photon-number distribution p_0..p_nmax plus the mass left beyond nmax."""

    probs: tuple[float, ...] = Field(min_length=1)
    tail_bound: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_normalization(self) -> "PhotonNumberDistribution":
        if any(p < 0.0 for p in self.probs):
            raise ValueError("photon-number probabilities must be nonnegative")

        total = math.fsum(self.probs) + self.tail_bound
        if abs(total - 1.0) > PROBABILITY_SLACK:
            raise ValueError(f"distribution mass is {total!r}, not 1")

        return self

    @property
    def nmax(self) -> int:
        return len(self.probs) - 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


class OutcomeDistribution(FrozenModel):
    """Exact distribution over the 2^N click patterns; pattern[i] is 1 when channel i clicks."""

    channels: int = Field(ge=1)
    probabilities: dict[tuple[int, ...], float]

    @model_validator(mode="after")
    def _check_outcomes(self) -> "OutcomeDistribution":
        if len(self.probabilities) != 2**self.channels:
            raise ValueError(f"expected {2**self.channels} patterns, got {len(self.probabilities)}")

        if any(p < 0.0 for p in self.probabilities.values()):
            raise ValueError("outcome probabilities must be nonnegative")

        total = math.fsum(self.probabilities.values())
        if abs(total - 1.0) > PROBABILITY_SLACK:
            raise ValueError(f"outcome probabilities sum to {total!r}, not 1")

        return self

    def marginal_click(self, channels: Iterable[int]) -> float:
        subset = tuple(channels)
        return math.fsum(p for pattern, p in self.probabilities.items() if all(pattern[i] for i in subset))

    def marginal_noclick(self, channels: Iterable[int]) -> float:
        subset = tuple(channels)
        return math.fsum(
            p for pattern, p in self.probabilities.items() if not any(pattern[i] for i in subset)
        )


def _parse_subset_keys(value: Any) -> Any:
    if isinstance(value, dict):
        return {
            (parse_subset_label(key) if isinstance(key, str) else tuple(sorted(key))): count
            for key, count in value.items()
        }

    return value


class CountSummary(FrozenModel):
    """Click and coincidence counts per channel subset over `n_trials` excitation pulses.

    `patterns`, when present, is the pulse-level click record compressed as a histogram of
    click patterns (bit i set when channel i clicked).
    """

    channels: int = Field(ge=1)
    n_trials: int = Field(ge=0)
    counts: dict[Subset, int]
    patterns: dict[int, int] | None = None

    @field_validator("counts", mode="before")
    @classmethod
    def _parse_counts(cls, value: Any) -> Any:
        return _parse_subset_keys(value)

    @field_serializer("counts")
    def _serialize_counts(self, counts: dict[Subset, int]) -> dict[str, int]:
        return {subset_label(subset): count for subset, count in sorted(counts.items(), key=_subset_order)}

    @field_serializer("patterns")
    def _serialize_patterns(self, patterns: dict[int, int] | None) -> dict[str, int] | None:
        if patterns is None:
            return None

        return {str(pattern): count for pattern, count in sorted(patterns.items())}

    @model_validator(mode="after")
    def _check_counts(self) -> "CountSummary":
        for subset, count in self.counts.items():
            if not subset or any(not 0 <= i < self.channels for i in subset):
                raise ValueError(f"subset {subset} is not a subset of {self.channels} channels")

            if not 0 <= count <= self.n_trials:
                raise ValueError(f"count {count} for {subset} is outside [0, {self.n_trials}]")

            for smaller in subsets(subset, min_size=len(subset) - 1, max_size=len(subset) - 1):
                if smaller and smaller in self.counts and count > self.counts[smaller]:
                    raise ValueError(f"coincidences {subset} exceed the counts of {smaller}")

        if self.patterns is not None:
            if any(not 0 <= pattern < 2**self.channels for pattern in self.patterns):
                raise ValueError("click pattern outside the channel range")

            if sum(self.patterns.values()) != self.n_trials:
                raise ValueError("click patterns do not add up to n_trials")

        return self

    @classmethod
    def from_patterns(
        cls,
        channels: int,
        pattern_counts: np.ndarray,
        *,
        max_order: int = MAX_ORDER,
    ) -> "CountSummary":
        pattern_counts = np.asarray(pattern_counts, dtype=np.int64)
        if pattern_counts.shape != (2**channels,):
            raise IllegalParameterError(f"expected {2**channels} pattern bins, got {pattern_counts.shape}")

        index = np.arange(2**channels)
        counts = {}
        for subset in subsets(channels, max_size=max_order):
            mask = subset_mask(subset)
            counts[subset] = int(pattern_counts[(index & mask) == mask].sum())

        return cls(
            channels=channels,
            n_trials=int(pattern_counts.sum()),
            counts=counts,
            patterns={int(pattern): int(count) for pattern, count in enumerate(pattern_counts) if count > 0},
        )

    def pattern_array(self) -> np.ndarray:
        if self.patterns is None:
            raise IllegalParameterError("count summary carries no pulse-level click record")

        histogram = np.zeros(2**self.channels, dtype=np.int64)
        for pattern, count in self.patterns.items():
            histogram[pattern] = count

        return histogram

    def count(self, channels: Iterable[int]) -> int:
        subset = tuple(sorted(channels))
        if not subset:
            return self.n_trials

        try:
            return self.counts[subset]
        except KeyError as e:
            raise IllegalParameterError(f"no coincidence count recorded for channels {subset}") from e

    def _of_size(self, size: int) -> dict[Subset, int]:
        return {subset: count for subset, count in self.counts.items() if len(subset) == size}

    @property
    def singles(self) -> dict[int, int]:
        return {subset[0]: count for subset, count in self._of_size(1).items()}

    @property
    def pairs(self) -> dict[Subset, int]:
        return self._of_size(2)

    @property
    def triples(self) -> dict[Subset, int]:
        return self._of_size(3)

    @property
    def quads(self) -> dict[Subset, int]:
        return self._of_size(4)


class ProbabilityTable(FrozenModel):
    """Click probability of every recorded channel subset (all channels of the subset click)."""

    channels: int = Field(ge=1)
    probs: dict[Subset, Probability]
    n_trials: int | None = None

    @field_validator("probs", mode="before")
    @classmethod
    def _parse_probs(cls, value: Any) -> Any:
        return _parse_subset_keys(value)

    @field_serializer("probs")
    def _serialize_probs(self, probs: dict[Subset, float]) -> dict[str, float]:
        return {subset_label(subset): p for subset, p in sorted(probs.items(), key=_subset_order)}

    def click(self, channels: Iterable[int]) -> float:
        subset = tuple(sorted(channels))
        if not subset:
            return 1.0

        try:
            return self.probs[subset]
        except KeyError as e:
            raise IllegalParameterError(f"no click probability recorded for channels {subset}") from e


def _subset_order(item: tuple[Subset, Any]) -> tuple[int, Subset]:
    subset = item[0]
    return len(subset), subset
