"""Click probabilities and the θ / g parameters of an emitter ensemble with Poissonian noise.

Closed forms hold for a uniform ensemble behind a balanced tree: a subset of k channels of
an N-channel tree stays dark with probability (1 - kηξ/N)^M e^{-λkξ/N}. Any other
configuration takes the generic path, σ-expectations over the mixed photon-number
distribution.
"""

import functools
import math
from collections.abc import Iterable, Sequence
from typing import Literal

from .distributions import DEFAULT_CUTOFF, mixed_distribution
from .exceptions import IllegalParameterError, UndefinedEstimatorError
from .models import (
    DetectorTree,
    EmitterEnsemble,
    NoiseModel,
    PhotonNumberDistribution,
    ProbabilityTable,
    Subset,
)
from .oracle import subset_click_probability, subset_noclick_probability
from .utils import MAX_ORDER, clamp_probability, subsets

Method = Literal["auto", "closed", "generic"]


@functools.lru_cache(maxsize=256)
def _distribution(ensemble: EmitterEnsemble, noise: NoiseModel, cutoff: float) -> PhotonNumberDistribution:
    return mixed_distribution(ensemble, noise, cutoff)


def _use_closed_form(ensemble: EmitterEnsemble, tree: DetectorTree, method: Method) -> bool:
    closed = ensemble.is_uniform and tree.balanced()
    match method:
        case "auto":
            return closed
        case "generic":
            return False
        case "closed":
            if not closed:
                raise IllegalParameterError("closed forms need a uniform ensemble and a balanced tree")
            return True
        case unknown:
            raise IllegalParameterError(f"unknown method {unknown!r}")


def _channel_share(tree: DetectorTree) -> float:
    """ξ/N of a balanced tree: routing and detection probability of a single channel."""
    return tree.weights[0] * tree.xi[0]


def _resolve_channels(order: int, tree: DetectorTree, channels: Sequence[int] | None) -> Subset:
    if order < 1:
        raise IllegalParameterError(f"order {order} must be at least 1")

    if channels is None:
        if order != tree.channels:
            raise IllegalParameterError(
                f"order {order} on a {tree.channels}-channel tree needs an explicit channel subset"
            )
        return tuple(range(tree.channels))

    subset = tree.check_subset(channels)
    if len(subset) != order:
        raise IllegalParameterError(f"{len(subset)} channels given for order {order}")

    return subset


def p0_subset(
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    channels: Iterable[int],
    *,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    """Probability that none of the channels in the subset clicks in a pulse."""
    subset = tree.check_subset(channels)
    if _use_closed_form(ensemble, tree, method):
        share = len(subset) * _channel_share(tree)
        base = max(0.0, 1.0 - ensemble.uniform_eta * share)
        return clamp_probability(base**ensemble.m * math.exp(-noise.lam * share))

    dist = _distribution(ensemble, noise, cutoff)
    return clamp_probability(subset_noclick_probability(dist, tree, subset).value)


def p0_all(
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    *,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    return p0_subset(ensemble, noise, tree, range(tree.channels), method=method, cutoff=cutoff)


def p0_single(
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    channel: int,
    *,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    tree.check_channel(channel)
    return p0_subset(ensemble, noise, tree, (channel,), method=method, cutoff=cutoff)


def theta_closed(
    order: int,
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    channels: Sequence[int] | None = None,
    *,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    """θ = P(no channel of the subset clicks) / Π_i P(channel i does not click)."""
    subset = _resolve_channels(order, tree, channels)
    if ensemble.m == 0:
        return 1.0

    if _use_closed_form(ensemble, tree, method):
        share = ensemble.uniform_eta * _channel_share(tree)
        denominator = (1.0 - share) ** order
        if denominator == 0.0:
            raise UndefinedEstimatorError("a channel never stays dark, θ is undefined")

        value = ((1.0 - order * share) / denominator) ** ensemble.m
        if noise.lam > 0:
            # the background factor e^{-λkξ/N} cancels between numerator and denominator
            ratio = p0_subset(ensemble, noise, tree, subset, method="closed") / math.prod(
                p0_subset(ensemble, noise, tree, (i,), method="closed") for i in subset
            )
            assert math.isclose(ratio, value, rel_tol=1e-9, abs_tol=1e-12)

        return value

    singles = [p0_subset(ensemble, noise, tree, (i,), method=method, cutoff=cutoff) for i in subset]
    if any(p == 0.0 for p in singles):
        raise UndefinedEstimatorError(f"a channel of {subset} never stays dark, θ is undefined")

    return p0_subset(ensemble, noise, tree, subset, method=method, cutoff=cutoff) / math.prod(singles)


def pclick_nfold(
    order: int,
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    channels: Sequence[int] | None = None,
    *,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    """Probability that every channel of the subset clicks in the same pulse."""
    subset = _resolve_channels(order, tree, channels)
    if noise.lam == 0 and order > ensemble.m:
        # fewer photons than channels that have to fire
        return 0.0

    if _use_closed_form(ensemble, tree, method):
        share = _channel_share(tree)
        eta = ensemble.uniform_eta
        terms = [
            (-1) ** r
            * math.comb(order, r)
            * max(0.0, 1.0 - eta * r * share) ** ensemble.m
            * math.exp(-noise.lam * r * share)
            for r in range(order + 1)
        ]
        return clamp_probability(math.fsum(terms))

    dist = _distribution(ensemble, noise, cutoff)
    return subset_click_probability(dist, tree, subset).value


def g_closed(
    order: int,
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    channels: Sequence[int] | None = None,
    *,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    """g = P(every channel of the subset clicks) / Π_i P(channel i clicks)."""
    subset = _resolve_channels(order, tree, channels)
    clicks = [1.0 - p0_subset(ensemble, noise, tree, (i,), method=method, cutoff=cutoff) for i in subset]
    if any(p <= 0.0 for p in clicks):
        raise UndefinedEstimatorError(f"a channel of {subset} never clicks, g is undefined")

    if ensemble.m == 0:
        return 1.0

    coincidence = pclick_nfold(order, ensemble, noise, tree, subset, method=method, cutoff=cutoff)
    return coincidence / math.prod(clicks)


def subset_probabilities(
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    tree: DetectorTree,
    *,
    max_order: int = MAX_ORDER,
    method: Method = "auto",
    cutoff: float = DEFAULT_CUTOFF,
) -> ProbabilityTable:
    """Exact click probability of every channel subset up to `max_order` channels."""
    probs = {
        subset: pclick_nfold(len(subset), ensemble, noise, tree, subset, method=method, cutoff=cutoff)
        for subset in subsets(tree.channels, max_size=max_order)
    }
    return ProbabilityTable(channels=tree.channels, probs=probs)
