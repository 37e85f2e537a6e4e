"""θ^(k) and g^(k) estimates from click and coincidence counts.

For a channel subset S the counts fix the frequencies of the 2^k click patterns restricted
to S (Möbius inversion of the subset counts). Both estimators are functions of those
frequencies; uncertainties come either from the delta method over that multinomial or
from resampling pulses, which for a pattern histogram is a multinomial redraw.
"""

import itertools
import logging
import math
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import Field

from .exceptions import IllegalParameterError, UndefinedEstimatorError
from .models import CountSummary, FrozenModel, ProbabilityTable, Subset
from .utils import MAX_ORDER, powerset, subset_label, subset_mask, subsets

logger = logging.getLogger(__name__)

UncertaintyMethod = Literal["auto", "propagation", "bootstrap"]
Weighting = Literal["mean", "spread", "inverse-variance"]

DEFAULT_BOOTSTRAP = 1000


class Kind(str, Enum):
    THETA = "theta"
    G = "g"


class Classification(str, Enum):
    CLASSICAL = "classical"
    NONCLASSICAL = "nonclassical"
    INCONCLUSIVE = "inconclusive"


class Estimate(FrozenModel):
    kind: Kind
    order: int = Field(ge=1)
    channels: Subset | None = None
    value: float | None = None
    sigma: float | None = Field(default=None, ge=0.0)
    error: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    @property
    def label(self) -> str:
        if self.channels is None:
            return f"{self.kind.value}{self.order}"

        return f"{self.kind.value}{self.order}[{subset_label(self.channels)}]"


class Aggregate(FrozenModel):
    kind: Kind
    order: int
    mean: float | None = None
    sigma: float | None = None
    combinations: int = 0
    undefined: int = 0


class EstimateReport(FrozenModel):
    estimates: list[Estimate]
    aggregates: list[Aggregate]
    classification: Classification
    k_sigma: float
    weighting: Weighting = "mean"
    single_emitter_candidate: bool = False
    method: str | None = None

    def aggregate(self, kind: Kind, order: int) -> Aggregate | None:
        return next((a for a in self.aggregates if a.kind == kind and a.order == order), None)

    def combinations(self, kind: Kind, order: int) -> list[Estimate]:
        return [e for e in self.estimates if e.kind == kind and e.order == order]


def probabilities(counts: CountSummary) -> ProbabilityTable:
    if counts.n_trials < 1:
        raise IllegalParameterError("no excitation trials recorded")

    return ProbabilityTable(
        channels=counts.channels,
        probs={subset: count / counts.n_trials for subset, count in counts.counts.items()},
        n_trials=counts.n_trials,
    )


def _check_combination(channels: Iterable[int], channel_count: int) -> Subset:
    subset = tuple(sorted(channels))
    if len(set(subset)) != len(subset) or any(not 0 <= i < channel_count for i in subset):
        raise IllegalParameterError(f"{subset} is not a combination of {channel_count} channels")

    if not 2 <= len(subset) <= MAX_ORDER:
        raise IllegalParameterError(f"order {len(subset)} is outside 2..{MAX_ORDER}")

    return subset


def theta_from_probabilities(table: ProbabilityTable, channels: Iterable[int]) -> float:
    """(Σ_T (-1)^|T| P_click[T]) / Π_i (1 - P_click[i]) over the subsets T of the combination."""
    subset = _check_combination(channels, table.channels)
    dark = [1.0 - table.click((i,)) for i in subset]
    if any(p <= 0.0 for p in dark):
        raise UndefinedEstimatorError(f"a channel of {subset} clicked in every trial, θ is undefined")

    numerator = math.fsum((-1) ** len(t) * table.click(t) for t in powerset(subset))
    return numerator / math.prod(dark)


def g_from_probabilities(table: ProbabilityTable, channels: Iterable[int]) -> float:
    """P_click[S] / Π_i P_click[i]."""
    subset = _check_combination(channels, table.channels)
    clicks = [table.click((i,)) for i in subset]
    if any(p <= 0.0 for p in clicks):
        raise UndefinedEstimatorError(f"a channel of {subset} never clicked, g is undefined")

    return table.click(subset) / math.prod(clicks)


def _pattern_cells(counts: CountSummary, subset: Subset) -> np.ndarray:
    """Frequencies of the click patterns restricted to the subset; bit j stands for subset[j]."""
    size = len(subset)
    cells = np.zeros(2**size)
    for pattern in range(2**size):
        clicked = [subset[j] for j in range(size) if pattern >> j & 1]
        free = [subset[j] for j in range(size) if not pattern >> j & 1]
        cells[pattern] = sum(
            (-1) ** len(extra) * counts.count(sorted(clicked + list(extra)))
            for r in range(len(free) + 1)
            for extra in itertools.combinations(free, r)
        )

    return cells / counts.n_trials


def _theta_from_cells(cells: np.ndarray) -> np.ndarray:
    size = int(math.log2(cells.shape[-1]))
    patterns = np.arange(cells.shape[-1])
    dark = np.stack([cells[..., (patterns >> j & 1) == 0].sum(axis=-1) for j in range(size)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.all(dark > 0, axis=-1), cells[..., 0] / np.prod(dark, axis=-1), np.nan)


def _g_from_cells(cells: np.ndarray) -> np.ndarray:
    size = int(math.log2(cells.shape[-1]))
    patterns = np.arange(cells.shape[-1])
    clicks = np.stack([cells[..., (patterns >> j & 1) == 1].sum(axis=-1) for j in range(size)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.all(clicks > 0, axis=-1), cells[..., -1] / np.prod(clicks, axis=-1), np.nan)


def _theta_gradient(cells: np.ndarray) -> np.ndarray:
    size = int(math.log2(len(cells)))
    patterns = range(len(cells))
    dark = [sum(cells[c] for c in patterns if not c >> j & 1) for j in range(size)]
    denominator = math.prod(dark)
    theta = cells[0] / denominator
    return np.array(
        [
            (1.0 if c == 0 else 0.0) / denominator - theta * sum(1.0 / dark[j] for j in range(size) if not c >> j & 1)
            for c in patterns
        ]
    )


def _g_gradient(cells: np.ndarray) -> np.ndarray:
    size = int(math.log2(len(cells)))
    full = len(cells) - 1
    patterns = range(len(cells))
    clicks = [sum(cells[c] for c in patterns if c >> j & 1) for j in range(size)]
    denominator = math.prod(clicks)
    g = cells[full] / denominator
    return np.array(
        [
            (1.0 if c == full else 0.0) / denominator - g * sum(1.0 / clicks[j] for j in range(size) if c >> j & 1)
            for c in patterns
        ]
    )


def _propagated_sigma(cells: np.ndarray, gradient: np.ndarray, n_trials: int) -> float:
    """First-order standard deviation of a function of multinomial cell frequencies."""
    mean = float(np.dot(cells, gradient))
    variance = (float(np.dot(cells, gradient**2)) - mean**2) / n_trials
    return math.sqrt(max(variance, 0.0))


def _bootstrap_sigma(
    counts: CountSummary,
    subset: Subset,
    statistic: Callable[[np.ndarray], np.ndarray],
    *,
    kind: Kind,
    n_boot: int,
    seed: int,
) -> float:
    histogram = counts.pattern_array()
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(list(Kind).index(kind), subset_mask(subset)))
    )
    resampled = rng.multinomial(counts.n_trials, histogram / counts.n_trials, size=n_boot)

    patterns = np.arange(len(histogram))
    restricted = sum(((patterns >> channel) & 1) << j for j, channel in enumerate(subset))
    cells = np.stack([resampled[:, restricted == c].sum(axis=1) for c in range(2 ** len(subset))], axis=1)

    values = statistic(cells / counts.n_trials)
    finite = values[np.isfinite(values)]
    if len(finite) < 2:
        raise UndefinedEstimatorError(f"too few defined bootstrap replicates for {subset}")

    if len(finite) < len(values):
        logger.debug("%d of %d bootstrap replicates undefined for %s", len(values) - len(finite), n_boot, subset)

    return float(np.std(finite, ddof=1))


def _missing_counts(counts: CountSummary, subset: Subset) -> list[Subset]:
    return [t for t in subsets(subset) if t not in counts.counts]


def _resolve_method(counts: CountSummary, method: UncertaintyMethod) -> str:
    match method:
        case "auto":
            return "bootstrap" if counts.patterns is not None else "propagation"
        case "bootstrap":
            if counts.patterns is None:
                raise IllegalParameterError("bootstrap needs the pulse-level click record")
            return "bootstrap"
        case "propagation":
            return "propagation"
        case unknown:
            raise IllegalParameterError(f"unknown uncertainty method {unknown!r}")


def _estimate(
    kind: Kind,
    counts: CountSummary,
    channels: Iterable[int],
    *,
    method: UncertaintyMethod,
    n_boot: int,
    seed: int,
) -> Estimate:
    subset = _check_combination(channels, counts.channels)
    table = probabilities(counts)
    if kind == Kind.THETA:
        value = theta_from_probabilities(table, subset)
        statistic, gradient = _theta_from_cells, _theta_gradient
    else:
        value = g_from_probabilities(table, subset)
        statistic, gradient = _g_from_cells, _g_gradient

    if _resolve_method(counts, method) == "bootstrap":
        sigma = _bootstrap_sigma(counts, subset, statistic, kind=kind, n_boot=n_boot, seed=seed)
    else:
        cells = _pattern_cells(counts, subset)
        sigma = _propagated_sigma(cells, gradient(cells), counts.n_trials)

    return Estimate(kind=kind, order=len(subset), channels=subset, value=value, sigma=sigma)


def theta_k(
    counts: CountSummary,
    channels: Iterable[int],
    *,
    method: UncertaintyMethod = "auto",
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> Estimate:
    return _estimate(Kind.THETA, counts, channels, method=method, n_boot=n_boot, seed=seed)


def g_k(
    counts: CountSummary,
    channels: Iterable[int],
    *,
    method: UncertaintyMethod = "auto",
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> Estimate:
    return _estimate(Kind.G, counts, channels, method=method, n_boot=n_boot, seed=seed)


def _aggregate(kind: Kind, order: int, estimates: Sequence[Estimate], weighting: Weighting) -> Aggregate:
    """Mean over the defined combinations of one order.

    `mean` propagates the per-combination sigmas as if the combinations were independent;
    combinations sharing a channel are correlated, so this understates the spread.
    `spread` takes the standard error of the mean from the scatter of the combinations
    instead, falling back to `mean` for a single combination.
    """
    defined = [e for e in estimates if e.value is not None]
    undefined = len(estimates) - len(defined)
    if not defined:
        return Aggregate(kind=kind, order=order, combinations=len(estimates), undefined=undefined)

    values = np.array([e.value for e in defined])
    sigmas = np.array([e.sigma or 0.0 for e in defined])

    if weighting == "inverse-variance" and np.all(sigmas > 0):
        weights = 1.0 / sigmas**2
        mean = float(np.sum(weights * values) / np.sum(weights))
        sigma = float(1.0 / math.sqrt(np.sum(weights)))
    elif weighting == "spread" and len(defined) > 1:
        mean = float(values.mean())
        sigma = float(values.std(ddof=1) / math.sqrt(len(defined)))
    else:
        mean = float(values.mean())
        sigma = float(math.sqrt(np.sum(sigmas**2)) / len(defined))

    return Aggregate(
        kind=kind,
        order=order,
        mean=mean,
        sigma=sigma,
        combinations=len(estimates),
        undefined=undefined,
    )


def _classify(aggregates: Sequence[Aggregate], k_sigma: float) -> Classification:
    def lowest(kind: Kind) -> Aggregate | None:
        return next((a for a in aggregates if a.kind == kind and a.mean is not None), None)

    primary = lowest(Kind.THETA) or lowest(Kind.G)
    if primary is None or primary.mean is None:
        return Classification.INCONCLUSIVE

    sigma = primary.sigma or 0.0
    if primary.mean + k_sigma * sigma < 1.0:
        return Classification.NONCLASSICAL

    if sigma == 0.0 and primary.mean == 1.0:
        return Classification.INCONCLUSIVE

    if primary.mean >= 1.0:
        return Classification.CLASSICAL

    return Classification.INCONCLUSIVE


def aggregate_and_classify(
    estimates: Sequence[Estimate],
    *,
    k_sigma: float = 3.0,
    weighting: Weighting = "mean",
    method: str | None = None,
) -> EstimateReport:
    groups: dict[tuple[Kind, int], list[Estimate]] = defaultdict(list)
    for estimate in estimates:
        groups[(estimate.kind, estimate.order)].append(estimate)

    ordered = sorted(groups, key=lambda key: (list(Kind).index(key[0]), key[1]))
    aggregates = [_aggregate(kind, order, groups[(kind, order)], weighting) for kind, order in ordered]

    g2 = next((a for a in aggregates if a.kind == Kind.G and a.order == 2 and a.mean is not None), None)
    candidate = g2 is not None and g2.mean is not None and g2.mean + k_sigma * (g2.sigma or 0.0) < 0.5

    return EstimateReport(
        estimates=list(estimates),
        aggregates=aggregates,
        classification=_classify(aggregates, k_sigma),
        k_sigma=k_sigma,
        weighting=weighting,
        single_emitter_candidate=candidate,
        method=method,
    )


def analyze(
    counts: CountSummary,
    *,
    orders: Iterable[int] = (2, 3, 4),
    method: UncertaintyMethod = "auto",
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    k_sigma: float = 3.0,
    weighting: Weighting = "mean",
) -> EstimateReport:
    """Estimate θ and g for every channel combination of the requested orders.

    Combinations whose estimator is undefined, or whose coincidence counts were not
    recorded, are kept in the report with an error instead of a value.

    Args:
        counts (CountSummary): Click and coincidence counts.
        orders (Iterable[int], optional): Coincidence orders. Orders above the channel count are skipped. Defaults to (2, 3, 4).
        method (UncertaintyMethod, optional): "propagation", "bootstrap" or "auto". Defaults to "auto".
        n_boot (int, optional): Bootstrap replicates. Defaults to DEFAULT_BOOTSTRAP.
        seed (int, optional): Bootstrap seed. Defaults to 0.
        k_sigma (float, optional): Confidence band of the classification. Defaults to 3.0.
        weighting (Weighting, optional): Aggregation over combinations. Defaults to "mean".

    Returns:
        EstimateReport: Estimates, per-order aggregates and the classification.
    """
    resolved = _resolve_method(counts, method)
    estimates: list[Estimate] = []

    for order in sorted(set(orders)):
        if order > counts.channels:
            logger.info("skipping order %d on a %d-channel tree", order, counts.channels)
            continue

        for subset in itertools.combinations(range(counts.channels), order):
            missing = _missing_counts(counts, subset)
            if missing:
                error = f"no coincidence counts for {', '.join(subset_label(t) for t in missing)}"
                logger.warning("%d-fold combination %s skipped: %s", order, subset, error)
                estimates.extend(
                    Estimate(kind=kind, order=order, channels=subset, error=error) for kind in (Kind.THETA, Kind.G)
                )
                continue

            for kind, estimator in ((Kind.THETA, theta_k), (Kind.G, g_k)):
                try:
                    estimates.append(estimator(counts, subset, method=resolved, n_boot=n_boot, seed=seed))
                except UndefinedEstimatorError as e:
                    logger.warning("%s%d%s is undefined: %s", kind.value, order, subset, e)
                    estimates.append(Estimate(kind=kind, order=order, channels=subset, error=str(e)))

    return aggregate_and_classify(estimates, k_sigma=k_sigma, weighting=weighting, method=resolved)


def _format_value(value: float | None, sigma: float | None) -> str:
    if value is None:
        return "undefined"

    if sigma is None:
        return f"{value:.6g}"

    return f"{value:.6g} ± {sigma:.2g}"


def render_report(report: EstimateReport) -> str:
    lines = [f"classification: {report.classification.value} (k = {report.k_sigma:g} sigma)"]
    if report.single_emitter_candidate:
        lines.append("single-emitter candidate: g(2) below 0.5")

    if report.method is not None:
        lines.append(f"uncertainties: {report.method}")

    lines.append("")
    lines.append("aggregates:")
    for aggregate in report.aggregates:
        lines.append(
            f"  {aggregate.kind.value}({aggregate.order}) = {_format_value(aggregate.mean, aggregate.sigma)}"
            f"  [{aggregate.combinations - aggregate.undefined}/{aggregate.combinations} combinations]"
        )

    lines.append("")
    lines.append("combinations:")
    for estimate in report.estimates:
        text = _format_value(estimate.value, estimate.sigma)
        if estimate.error is not None:
            text = f"{text} ({estimate.error})"
        lines.append(f"  {estimate.label} = {text}")

    return "\n".join(lines) + "\n"
