import math
from collections.abc import Mapping

from sqlmodel.sql.expression import Select, SelectOfScalar

from clicktree.models import CountSummary
from clicktree.utils import parse_subset_label


def compile_with_literal_binds(s: Select | SelectOfScalar):
    return s.compile(compile_kwargs={"literal_binds": True})


def normalize_multiline_string(s: str):
    lines = [line.strip() for line in s.splitlines()]
    return "\n".join(lines).strip()


def make_counts(channels: int, n_trials: int, counts: Mapping[str, int]) -> CountSummary:
    """Count summary from label keyed counts, e.g. {"0": 10, "1": 12, "0-1": 3}."""
    return CountSummary(
        channels=channels,
        n_trials=n_trials,
        counts={parse_subset_label(label): count for label, count in counts.items()},
    )


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)


def within_sigmas(value: float, expected: float, sigma: float, k: float = 5.0) -> bool:
    return abs(value - expected) <= k * sigma
