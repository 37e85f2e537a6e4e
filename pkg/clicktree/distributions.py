"""Photon-number distributions of an emitter ensemble mixed with Poissonian background.

Every click/no-click POVM of a detector tree is diagonal in the Fock basis, so the state
only enters through its photon-number distribution p_n.
"""

import math

import numpy as np
from pydantic import Field
from scipy import stats

from .exceptions import IllegalParameterError
from .models import EmitterEnsemble, FrozenModel, NoiseModel, PhotonNumberDistribution

DEFAULT_CUTOFF = 1e-12


class Expectation(FrozenModel):
    """Σ σ^n p_n and the largest amount the truncated tail could add to it."""

    value: float = Field(ge=0.0)
    bound: float = Field(default=0.0, ge=0.0)


def sps_distribution(ensemble: EmitterEnsemble) -> PhotonNumberDistribution:
    if ensemble.m == 0:
        return PhotonNumberDistribution(probs=(1.0,))

    if ensemble.is_uniform:
        probs = stats.binom.pmf(np.arange(ensemble.m + 1), ensemble.m, ensemble.uniform_eta)
    else:
        # Poisson-binomial: one Bernoulli factor per emitter
        probs = np.ones(1)
        for eta in ensemble.efficiencies:
            probs = np.convolve(probs, [1.0 - eta, eta])

    return PhotonNumberDistribution(probs=tuple(float(p) for p in probs))


def _poisson_support(lam: float, cutoff: float) -> int:
    """Smallest kmax whose Poisson tail mass beyond kmax is below `cutoff`."""
    if lam == 0:
        return 0

    kmax = max(int(stats.poisson.isf(cutoff, lam)), 0)
    while stats.poisson.sf(kmax, lam) >= cutoff:
        kmax += 1
    while kmax > 0 and stats.poisson.sf(kmax - 1, lam) < cutoff:
        kmax -= 1

    return kmax


def mixed_distribution(
    ensemble: EmitterEnsemble,
    noise: NoiseModel,
    cutoff: float = DEFAULT_CUTOFF,
) -> PhotonNumberDistribution:
    if not 0.0 < cutoff < 1.0:
        raise IllegalParameterError(f"cutoff {cutoff!r} is outside (0, 1)")

    sps = sps_distribution(ensemble).as_array()
    kmax = _poisson_support(noise.lam, cutoff)
    background = stats.poisson.pmf(np.arange(kmax + 1), noise.lam)
    tail_bound = float(stats.poisson.sf(kmax, noise.lam)) if noise.lam > 0 else 0.0

    probs = np.convolve(sps, background)
    return PhotonNumberDistribution(probs=tuple(float(p) for p in probs), tail_bound=tail_bound)


def expectation_sigma(dist: PhotonNumberDistribution, sigma: float) -> Expectation:
    if not 0.0 <= sigma <= 1.0:
        raise IllegalParameterError(f"sigma {sigma!r} is outside [0, 1]")

    powers = sigma ** np.arange(dist.nmax + 1)
    value = math.fsum(dist.as_array() * powers)
    return Expectation(value=value, bound=dist.tail_bound * sigma ** (dist.nmax + 1))
