"""Exact detector-tree outcome probabilities conditioned on the number of incoming photons.

Photons are routed independently: n photons split over the channels multinomially with
the tree weights, and a channel holding k photons stays dark with probability (1 - xi)^k.
The closed forms below are checked against brute-force enumeration of those splits.
"""

import itertools
import logging
import math
from collections.abc import Iterable, Iterator

import numpy as np
from pydantic import Field

from .distributions import Expectation, expectation_sigma
from .exceptions import EnumerationLimitError, IllegalParameterError
from .models import DetectorTree, FrozenModel, OutcomeDistribution, PhotonNumberDistribution
from .utils import PROBABILITY_SLACK, clamp_probability, powerset, subsets

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_LIMIT = 12


def compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Yield every occupation vector (k_1..k_parts) with Σ k_i = n."""
    if parts == 1:
        yield (n,)
        return

    for first in range(n, -1, -1):
        for rest in compositions(n - first, parts - 1):
            yield (first, *rest)


def _check_photons(n: int) -> int:
    if n < 0:
        raise IllegalParameterError(f"photon number {n} is negative")

    return n


def multinomial_split_probs(n: int, tree: DetectorTree) -> dict[tuple[int, ...], float]:
    _check_photons(n)

    split: dict[tuple[int, ...], float] = {}
    for occupation in compositions(n, tree.channels):
        coefficient = math.factorial(n) // math.prod(math.factorial(k) for k in occupation)
        split[occupation] = coefficient * math.prod(w**k for w, k in zip(tree.weights, occupation))

    return split


def _noclick_base(tree: DetectorTree, channels: Iterable[int]) -> float:
    return max(0.0, 1.0 - tree.efficiency(channels))


def q_single_noclick(n: int, tree: DetectorTree, channel: int) -> float:
    tree.check_channel(channel)
    return _noclick_base(tree, (channel,)) ** _check_photons(n)


def q_all_noclick(n: int, tree: DetectorTree) -> float:
    return _noclick_base(tree, range(tree.channels)) ** _check_photons(n)


def q_kfold_click(n: int, tree: DetectorTree, channels: Iterable[int]) -> float:
    """Probability that every channel of the subset clicks, other channels unconstrained.

    Inclusion-exclusion over the subsets T of S of the probability that T stays dark.
    """
    subset = tree.check_subset(channels)
    if not subset:
        raise IllegalParameterError("coincidence subset is empty")

    _check_photons(n)
    terms = [(-1) ** len(dark) * _noclick_base(tree, dark) ** n for dark in powerset(subset)]
    return clamp_probability(math.fsum(terms))


def q_kfold_click_literal(n: int, tree: DetectorTree) -> float:
    """N-fold coincidence for a balanced tree with the photon-number exponent left out.

    Debug aid for the oracle check only; it does not depend on n and is not a probability.
    """
    _check_photons(n)
    channels = tree.channels
    xi = math.fsum(tree.xi) / channels
    return math.fsum((-1) ** r * math.comb(channels, r) * (1.0 - r * xi / channels) for r in range(channels + 1))


def enumerate_outcomes(
    n: int,
    tree: DetectorTree,
    *,
    limit: int = DEFAULT_ENUMERATION_LIMIT,
) -> OutcomeDistribution:
    if _check_photons(n) > limit:
        raise EnumerationLimitError(f"{n} photons exceed the enumeration limit of {limit}")

    patterns = list(itertools.product((0, 1), repeat=tree.channels))
    accumulated: dict[tuple[int, ...], list[float]] = {pattern: [] for pattern in patterns}

    for occupation, split_prob in multinomial_split_probs(n, tree).items():
        if split_prob == 0.0:
            continue

        click_probs = [1.0 - (1.0 - xi) ** k for xi, k in zip(tree.xi, occupation)]
        for pattern in patterns:
            accumulated[pattern].append(
                split_prob * math.prod(c if bit else 1.0 - c for c, bit in zip(click_probs, pattern))
            )

    return OutcomeDistribution(
        channels=tree.channels,
        probabilities={pattern: math.fsum(terms) for pattern, terms in accumulated.items()},
    )


def subset_noclick_probability(
    dist: PhotonNumberDistribution, tree: DetectorTree, channels: Iterable[int]
) -> Expectation:
    return expectation_sigma(dist, _noclick_base(tree, channels))


def subset_click_probability(
    dist: PhotonNumberDistribution, tree: DetectorTree, channels: Iterable[int]
) -> Expectation:
    """Probability that every channel of the subset clicks for a photon-number distribution."""
    subset = tree.check_subset(channels)
    if not subset:
        raise IllegalParameterError("coincidence subset is empty")

    values: list[float] = []
    bound = 0.0
    for dark in powerset(subset):
        expectation = subset_noclick_probability(dist, tree, dark)
        values.append((-1) ** len(dark) * expectation.value)
        bound += expectation.bound

    return Expectation(value=clamp_probability(math.fsum(values)), bound=bound)


class OracleReport(FrozenModel):
    passed: bool
    max_deviation: float = Field(ge=0.0)
    comparisons: int = Field(ge=0)
    tolerance: float
    worst: str = ""


def _random_trees(rng: np.random.Generator, channels: int, count: int) -> Iterator[tuple[DetectorTree, bool]]:
    yield DetectorTree.uniform(channels, float(rng.uniform())), True
    for _ in range(count):
        xi = tuple(float(x) for x in rng.uniform(size=channels))
        weights = rng.dirichlet(np.ones(channels))
        weights = tuple(float(w) for w in weights / weights.sum())
        yield DetectorTree(xi=xi, weights=weights), False


def check_equivalence(
    *,
    max_photons: int = 6,
    max_channels: int = 4,
    trees: int = 50,
    seed: int = 0,
    literal: bool = False,
    limit: int = DEFAULT_ENUMERATION_LIMIT,
    tolerance: float = PROBABILITY_SLACK,
) -> OracleReport:
    """Compare the inclusion-exclusion POVMs against exhaustive enumeration.

    With `literal` the full-tree coincidence of balanced trees is taken from the formula
    without the photon-number exponent, which the enumeration must reject.
    """
    if max_photons > limit:
        raise EnumerationLimitError(f"{max_photons} photons exceed the enumeration limit of {limit}")

    if max_channels < 1 or trees < 0:
        raise IllegalParameterError("need at least one channel and a nonnegative tree count")

    rng = np.random.default_rng(seed)
    max_deviation = 0.0
    comparisons = 0
    worst = ""

    def compare(expected: float, got: float, what: str):
        nonlocal max_deviation, comparisons, worst
        comparisons += 1
        deviation = abs(expected - got)
        if deviation > max_deviation:
            max_deviation = deviation
            worst = what

    for channels in range(1, max_channels + 1):
        for tree, balanced in _random_trees(rng, channels, trees):
            for n in range(max_photons + 1):
                outcomes = enumerate_outcomes(n, tree, limit=limit)
                context = f"n={n}, xi={tree.xi}, weights={tree.weights}"

                for channel in range(channels):
                    compare(outcomes.marginal_noclick((channel,)), q_single_noclick(n, tree, channel), f"Q_single[{channel}] {context}")

                compare(outcomes.marginal_noclick(range(channels)), q_all_noclick(n, tree), f"Q_all {context}")

                for subset in subsets(channels):
                    if literal and balanced and len(subset) == channels:
                        got = q_kfold_click_literal(n, tree)
                    else:
                        got = q_kfold_click(n, tree, subset)

                    compare(outcomes.marginal_click(subset), got, f"Q_click{subset} {context}")

    report = OracleReport(
        passed=max_deviation <= tolerance,
        max_deviation=max_deviation,
        comparisons=comparisons,
        tolerance=tolerance,
        worst=worst,
    )
    logger.info("oracle check: %d comparisons, max deviation %.3e", comparisons, max_deviation)
    return report
