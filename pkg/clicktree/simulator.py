"""Pulse-by-pulse Monte Carlo of an emitter ensemble, Poissonian background and detector tree.

Per pulse: m ~ Binomial(M, η) emitter photons (per-emitter Bernoulli draws for unequal
efficiencies), k ~ Poisson(λ) background photons, multinomial routing of the m + k photons
with the tree weights and binomial detection with the channel efficiencies. A channel
clicks when it detects at least one photon.

Pulses are drawn in fixed-size blocks, each block seeded from the master seed and its
block index, so results do not depend on how many workers process the blocks.
"""

import logging
import time
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import Field, model_validator

from .exceptions import IllegalParameterError
from .models import CountSummary, DetectorTree, EmitterEnsemble, FrozenModel, NoiseModel
from .timetags import StreamHeader, TimeTagStream, period_from_rate, window_from_ns

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1 << 16

_CLICK_STREAM = 0
_JITTER_STREAM = 1


class SimulationConfig(FrozenModel):
    ensemble: EmitterEnsemble
    noise: NoiseModel = NoiseModel()
    tree: DetectorTree
    n_pulses: int = Field(ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    emit_stream: bool = False
    rep_rate: float = Field(default=5e6, gt=0)
    window_ns: float = Field(default=40.0, gt=0)

    @model_validator(mode="after")
    def _check_window(self) -> "SimulationConfig":
        if self.window_ps < 1 or self.window_ps >= self.period_ps:
            raise ValueError(f"a {self.window_ns} ns window does not fit in a {self.period_ps} ps pulse period")

        return self

    @property
    def period_ps(self) -> int:
        return period_from_rate(self.rep_rate)

    @property
    def window_ps(self) -> int:
        return window_from_ns(self.window_ns)


def _block_rng(seed: int, block: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block, stream)))


def _blocks(n_pulses: int) -> Iterator[tuple[int, int]]:
    for block, start in enumerate(range(0, n_pulses, BLOCK_SIZE)):
        yield block, min(BLOCK_SIZE, n_pulses - start)


def simulate_clicks(config: SimulationConfig, block: int, size: int) -> np.ndarray:
    """Click matrix (pulses x channels) of one block."""
    rng = _block_rng(config.seed, block, _CLICK_STREAM)
    ensemble = config.ensemble

    if ensemble.is_uniform:
        photons = rng.binomial(ensemble.m, ensemble.uniform_eta, size=size)
    else:
        photons = (rng.random((size, ensemble.m)) < np.asarray(ensemble.efficiencies)).sum(axis=1)

    photons = photons + rng.poisson(config.noise.lam, size=size)
    routed = rng.multinomial(photons, np.asarray(config.tree.weights))
    detected = rng.binomial(routed, np.asarray(config.tree.xi))
    return detected > 0


def _pattern_histogram(config: SimulationConfig, block: int, size: int) -> np.ndarray:
    clicks = simulate_clicks(config, block, size)
    patterns = clicks.astype(np.int64) @ (1 << np.arange(config.tree.channels))
    return np.bincount(patterns, minlength=2**config.tree.channels)


def simulate(config: SimulationConfig, *, workers: int | None = None) -> CountSummary:
    """Monte Carlo click counts for the configured ensemble, noise and detector tree.

    Args:
        config: Source, tree, pulse count and seed of the run.
        workers: Threads to spread the pulse blocks over. Every block has its own random
            stream, so the result does not depend on this value.

    Returns:
        CountSummary: Counts of every channel subset, with the full pattern histogram.
    """
    started = time.perf_counter()
    blocks = list(_blocks(config.n_pulses))

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            histograms = list(executor.map(lambda b: _pattern_histogram(config, *b), blocks))
    else:
        histograms = [_pattern_histogram(config, block, size) for block, size in blocks]

    counts = CountSummary.from_patterns(config.tree.channels, np.sum(histograms, axis=0))
    logger.info(
        "simulated %d pulses in %d blocks (%.2f s)",
        config.n_pulses,
        len(blocks),
        time.perf_counter() - started,
    )
    return counts


def simulate_stream(config: SimulationConfig) -> TimeTagStream:
    """Synthetic time tags: one event per click, uniformly placed inside the pulse window."""
    if not config.emit_stream:
        raise IllegalParameterError("stream output is disabled in this simulation config")

    period = config.period_ps
    channels: list[np.ndarray] = []
    timestamps: list[np.ndarray] = []

    for block, size in _blocks(config.n_pulses):
        pulse, channel = np.nonzero(simulate_clicks(config, block, size))
        jitter = _block_rng(config.seed, block, _JITTER_STREAM).integers(0, config.window_ps, size=len(pulse))
        stamps = (block * BLOCK_SIZE + pulse) * period + jitter

        order = np.lexsort((channel, stamps))
        channels.append(channel[order])
        timestamps.append(stamps[order])

    header = StreamHeader(
        rep_rate_hz=config.rep_rate,
        window_ns=config.window_ns,
        channels=config.tree.channels,
        duration_ps=config.n_pulses * period,
        source=f"clicktree simulation, seed {config.seed}",
    )
    return TimeTagStream(
        header=header,
        event_channels=np.concatenate(channels) if channels else [],
        timestamps=np.concatenate(timestamps) if timestamps else [],
    )
