import itertools
import math
from collections.abc import Iterable, Iterator
from typing import Any

from .exceptions import ProbabilityRangeError

PROBABILITY_SLACK = 1e-12
MAX_ORDER = 4


def clamp_probability(value: float, *, slack: float = PROBABILITY_SLACK) -> float:
    if math.isnan(value):
        raise ProbabilityRangeError("probability is NaN")

    if -slack <= value < 0.0:
        return 0.0

    if 1.0 < value <= 1.0 + slack:
        return 1.0

    if value < 0.0 or value > 1.0:
        raise ProbabilityRangeError(f"{value!r} is outside [0, 1] beyond the {slack:g} slack")

    return value


def subsets(
    channels: Iterable[int] | int, *, min_size: int = 1, max_size: int | None = None
) -> Iterator[tuple[int, ...]]:
    """Yield channel subsets ordered by size, then lexicographically."""
    pool = tuple(range(channels)) if isinstance(channels, int) else tuple(sorted(channels))
    upper = len(pool) if max_size is None else min(max_size, len(pool))
    for size in range(min_size, upper + 1):
        yield from itertools.combinations(pool, size)


def powerset(channels: Iterable[int]) -> Iterator[tuple[int, ...]]:
    yield from subsets(channels, min_size=0)


def subset_mask(channels: Iterable[int]) -> int:
    mask = 0
    for channel in channels:
        mask |= 1 << channel

    return mask


def subset_label(channels: Iterable[int]) -> str:
    return "-".join(str(channel) for channel in channels)


def parse_subset_label(label: str) -> tuple[int, ...]:
    return tuple(sorted(int(part) for part in label.split("-")))


def is_surrounded(s: Any, prefix: str | tuple[str, ...]) -> bool:
    if isinstance(s, str) and len(s) >= 2:
        return s[0] == s[-1] and s.startswith(prefix)

    return False


def dequote(s: str) -> str:
    if is_surrounded(s, ('"', "'")):
        return s[1:-1]

    return s
