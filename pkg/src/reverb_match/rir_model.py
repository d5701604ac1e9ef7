# This file implements Polack-model RIR synthesis, direct-path alignment of measured RIRs
# and Schroeder-integration RT60 measurement.
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy import stats

from .errors import ConfigError, DecayError, InputError

logger = logging.getLogger(__name__)

MIXING_TIME_S = 0.02  # 20 ms, dataset-average mixing time
NOISE_SIGMA = 0.02
MAX_RIR_S = 1.5


class NoiseKind(StrEnum):
    HALF_NORMAL = 'half-normal'  # |b(n)|, the synthesizer's default
    GAUSSIAN = 'gaussian'  # signed b(n), plain Polack model


@dataclass(frozen=True)
class AcousticParams:
    """
    Represents the acoustic parameters of a synthetic RIR.
    mixing_time and rir_len are in samples; both default from rt60 and sample_rate.
    """
    rt60: float
    sample_rate: int = 16000
    mixing_time: int | None = field(default=None)
    sigma: float = NOISE_SIGMA
    rir_len: int | None = field(default=None)

    def __post_init__(self):
        if not self.rt60 > 0:
            raise ConfigError(f'RT60 must be positive, got {self.rt60}')
        if self.sample_rate <= 0:
            raise ConfigError(f'Invalid sample rate {self.sample_rate}')
        if self.mixing_time is None:
            object.__setattr__(self, 'mixing_time', round(MIXING_TIME_S * self.sample_rate))
        if self.rir_len is None:
            rir_len = min(math.ceil(1.5 * self.rt60 * self.sample_rate),
                          math.ceil(MAX_RIR_S * self.sample_rate))
            object.__setattr__(self, 'rir_len', rir_len)
        if self.mixing_time < 1:
            raise ConfigError(f'Mixing time must be at least one sample, got {self.mixing_time}')
        if self.sigma < 0:
            raise ConfigError(f'Noise scale must be non-negative, got {self.sigma}')

    @property
    def decay_rate(self) -> float:
        """
        Amplitude decay per sample, 3 ln(10) / (RT60 fs)
        """
        return 3 * math.log(10) / (self.rt60 * self.sample_rate)

    def envelope(self, n: np.ndarray) -> np.ndarray:
        return np.exp(-self.decay_rate * n)


@dataclass(frozen=True, eq=False)
class Rir:
    """
    Represents a real time-domain room impulse response
    """
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise InputError('empty input')
        object.__setattr__(self, 'samples', samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def synth_rir(params: AcousticParams, seed: int | np.random.SeedSequence,
              *, noise: NoiseKind = NoiseKind.HALF_NORMAL) -> Rir:
    """
    Synthesizes a Polack RIR: a unit direct path at n = 0, silence up to the mixing time,
    then noise under the exponential envelope exp(-3 ln(10) n / (RT60 fs)).
    The noise b(n) is drawn for every index so it can be re-derived from the seed.
    """
    if params.rir_len <= params.mixing_time:
        raise ConfigError(f'RIR shorter than mixing time: {params.rir_len} <= {params.mixing_time}')
    rng = np.random.default_rng(seed)
    b = rng.normal(0.0, params.sigma, params.rir_len)
    if noise == NoiseKind.HALF_NORMAL:
        b = np.abs(b)
    n = np.arange(params.rir_len)
    samples = np.zeros(params.rir_len)
    samples[0] = 1.0
    late = n > params.mixing_time
    samples[late] = b[late] * params.envelope(n[late])
    return Rir(samples, params.sample_rate)


def normalize_align(rir: Rir) -> Rir:
    """
    Drops the samples before the direct path (the peak of |h|) and scales it to +1
    """
    peak = int(np.argmax(np.abs(rir.samples)))
    if rir.samples[peak] == 0:
        raise InputError('silent RIR')
    return Rir(rir.samples[peak:] / rir.samples[peak], rir.sample_rate)


def _late_part(rir: Rir) -> np.ndarray:
    # skip the direct path and the exactly silent samples right after it
    x = rir.samples
    peak = int(np.argmax(np.abs(x)))
    rest = np.flatnonzero(x[peak + 1:])
    if rest.size == 0:
        return x[peak:]
    return x[peak + 1 + rest[0]:]


def energy_decay_curve(rir: Rir, *, exclude_direct: bool = False) -> np.ndarray:
    """
    Schroeder backward integration of h^2, in dB relative to the total energy
    """
    x = _late_part(rir) if exclude_direct else rir.samples
    edc = np.cumsum(x[::-1] ** 2)[::-1]
    if edc[0] == 0:
        raise InputError('silent RIR')
    with np.errstate(divide='ignore'):
        return 10 * np.log10(edc / edc[0])


def schroeder_rt60(rir: Rir, *, fit_range_db: tuple[float, float] = (-5.0, -25.0),
                   exclude_direct: bool = True) -> float:
    """
    Measures RT60 from the energy decay curve: a least-squares line over the
    fit_range_db span, extrapolated to a 60 dB decay.
    """
    if rir.duration < 0.1:
        raise InputError(f'RIR of {rir.duration:.3f} s is shorter than 0.1 s')
    top, bottom = fit_range_db
    edc_db = energy_decay_curve(rir, exclude_direct=exclude_direct)
    if edc_db.min() > bottom:
        raise DecayError(f'insufficient decay range: curve stops at {edc_db.min():.1f} dB')
    start = int(np.argmax(edc_db <= top))
    end = int(np.argmax(edc_db <= bottom))
    if end - start < 2:
        raise DecayError('insufficient decay range: fit span has fewer than 3 samples')
    t = np.arange(start, end + 1) / rir.sample_rate
    fit = stats.linregress(t, edc_db[start:end + 1])
    logger.debug(f'EDC fit over samples [{start}, {end}]: slope {fit.slope:.2f} dB/s')
    if fit.slope >= 0:
        raise DecayError('insufficient decay range: fitted slope is not negative')
    return -60.0 / fit.slope
