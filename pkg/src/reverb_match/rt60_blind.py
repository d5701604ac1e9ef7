# This file implements blind RT60 estimation from reverberant speech: free decay regions are
# detected in a subband decomposition of the spectrogram, their slopes give per-region RT60
# values, and an affine calibration maps the median to the true reverberation time.
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage, stats

from .errors import CalibrationError, ConfigError, DecayError, InputError
from .stft_core import StftConfig, stft

logger = logging.getLogger(__name__)

RT60_CLAMP = (0.05, 3.0)


@dataclass(frozen=True)
class BlindRt60Config:
    """
    Represents the free-decay detector settings
    """
    min_region_frames: int = 8
    ripple_db: float = 1.0  # allowed rise between consecutive frames of a decay
    low_hz: float = 300.0
    high_hz: float = 4000.0
    subband_bins: int = 16
    smooth_frames: int = 3
    dynamic_range_db: float = 60.0  # a run stops this far below its peak
    head_db: float = 5.0  # the fit starts this far below the run peak
    span_db: float = 40.0
    min_drop_db: float = 10.0
    min_fit_frames: int = 4

    def __post_init__(self):
        if self.min_region_frames < 2 or self.min_fit_frames < 2:
            raise ConfigError('Decay regions need at least two frames')
        if not 0 <= self.low_hz < self.high_hz:
            raise ConfigError(f'Invalid band range [{self.low_hz}, {self.high_hz}] Hz')
        if self.subband_bins < 1 or self.smooth_frames < 1:
            raise ConfigError('Subband width and smoothing length must be positive')
        if self.ripple_db < 0 or self.span_db <= 0 or self.dynamic_range_db <= self.head_db:
            raise ConfigError('Invalid decay level thresholds')


@dataclass(frozen=True)
class DecayRegion:
    """
    Represents a free decay region of one subband, frames [start_frame, end_frame)
    """
    band: int
    start_frame: int
    end_frame: int
    slope_db_per_s: float

    @property
    def rt60(self) -> float:
        return -60.0 / self.slope_db_per_s


@dataclass(frozen=True)
class Calibration:
    """
    Represents an affine map from raw to true RT60, true = slope * raw + intercept
    fitted on n_pairs >= 2 pairs. The uncalibrated identity map has n_pairs = 0.
    """
    slope: float
    intercept: float
    n_pairs: int

    def __post_init__(self):
        if not (np.isfinite(self.slope) and self.slope > 0 and np.isfinite(self.intercept)):
            raise CalibrationError(f'Calibration needs a positive slope and finite intercept, '
                                   f'got ({self.slope}, {self.intercept})')
        uncalibrated = self.n_pairs == 0 and (self.slope, self.intercept) == (1.0, 0.0)
        if self.n_pairs < 2 and not uncalibrated:
            raise CalibrationError(f'Calibration needs at least 2 pairs, got {self.n_pairs}')

    @staticmethod
    def identity() -> Calibration:
        return Calibration(1.0, 0.0, 0)

    def apply(self, raw: float) -> float:
        low, high = RT60_CLAMP
        return float(np.clip(self.slope * raw + self.intercept, low, high))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> Calibration:
        try:
            doc = json.loads(text)
            return Calibration(float(doc['slope']), float(doc['intercept']), int(doc['n_pairs']))
        except (KeyError, TypeError, ValueError) as e:
            raise CalibrationError(f'Invalid calibration document: {e}') from e

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + '\n')

    @staticmethod
    def load(path: str | Path) -> Calibration:
        return Calibration.from_json(Path(path).read_text())


def subband_levels(signal: np.ndarray, config: StftConfig,
                   params: BlindRt60Config = BlindRt60Config()) -> np.ndarray:
    """
    Subband decomposition of the spectrogram: one-sided power between low_hz and high_hz,
    summed over groups of subband_bins bins, smoothed in time, in dB. Shape B x T.
    """
    power = np.abs(stft(signal, config).data[:config.n_fft // 2 + 1]) ** 2
    freqs = np.arange(power.shape[0]) * config.sample_rate / config.n_fft
    selected = power[(freqs >= params.low_hz) & (freqs <= params.high_hz)]
    n_subbands = selected.shape[0] // params.subband_bins
    if n_subbands == 0:
        raise ConfigError('Band range holds fewer bins than one subband')
    grouped = selected[:n_subbands * params.subband_bins]
    grouped = grouped.reshape(n_subbands, params.subband_bins, -1).sum(axis=1)
    smoothed = ndimage.uniform_filter1d(grouped, params.smooth_frames, axis=1, mode='nearest')
    floor = max(smoothed.max(), np.finfo(float).tiny) * 1e-12
    return 10 * np.log10(np.maximum(smoothed, floor))


def _runs(levels: np.ndarray, params: BlindRt60Config) -> Iterable[tuple[int, int]]:
    start, peak = 0, levels[0]
    for i in range(1, levels.size):
        if levels[i] < levels[i - 1] + params.ripple_db and levels[i] > peak - params.dynamic_range_db:
            peak = max(peak, levels[i])
            continue
        yield start, i
        start, peak = i, levels[i]
    yield start, levels.size


def find_decay_regions(levels_db: np.ndarray, frame_rate: float,
                       params: BlindRt60Config = BlindRt60Config()) -> list[DecayRegion]:
    """
    Scans every subband for maximal runs of decreasing level and fits the log-energy decay
    of each run between head_db and head_db + span_db below its peak
    """
    regions = []
    for band, levels in enumerate(levels_db):
        for start, end in _runs(levels, params):
            if end - start < params.min_region_frames:
                continue
            run = levels[start:end]
            top = int(np.argmax(run))
            tail = run[top:]
            fit = np.flatnonzero((tail <= run[top] - params.head_db)
                                 & (tail >= run[top] - params.head_db - params.span_db))
            if fit.size < params.min_fit_frames:
                continue
            fit = np.arange(fit[0], fit[-1] + 1)
            line = stats.linregress(fit / frame_rate, tail[fit])
            drop = -line.slope * (fit[-1] - fit[0]) / frame_rate
            if line.slope >= 0 or drop < params.min_drop_db:
                continue
            regions.append(DecayRegion(band, start, end, float(line.slope)))
    return regions


def estimate_rt60_raw(signal: np.ndarray, config: StftConfig,
                      params: BlindRt60Config = BlindRt60Config()) -> float:
    """
    Median RT60 over all free decay regions, uncalibrated
    """
    x = np.asarray(signal, dtype=float)
    if x.size < config.sample_rate:
        raise InputError(f'Blind RT60 estimation needs at least 1 s of signal, got {x.size} samples')
    levels = subband_levels(x, config, params)
    regions = find_decay_regions(levels, config.sample_rate / config.hop, params)
    if not regions:
        raise DecayError('no free decay detected')
    logger.debug(f'{len(regions)} free decay regions over {levels.shape[0]} subbands')
    return float(np.median([region.rt60 for region in regions]))


def fit_calibration(raw: Sequence[float], true: Sequence[float]) -> Calibration:
    """
    Least-squares line true = slope * raw + intercept
    """
    raw, true = np.asarray(raw, dtype=float), np.asarray(true, dtype=float)
    if raw.size < 2:
        raise CalibrationError(f'Calibration needs at least 2 pairs, got {raw.size}')
    if np.ptp(raw) == 0:
        raise CalibrationError('rank-deficient calibration: raw estimates are constant')
    line = stats.linregress(raw, true)
    if not line.slope > 0:
        raise CalibrationError(f'Calibration slope {line.slope:.3f} is not positive')
    return Calibration(float(line.slope), float(line.intercept), int(raw.size))


def calibrate(pairs: Sequence[tuple[np.ndarray, float]], config: StftConfig,
              params: BlindRt60Config = BlindRt60Config(), *, workers: int = 1) -> Calibration:
    """
    Fits a calibration on (reverberant signal, true RT60) pairs.
    Pairs whose raw estimate fails are skipped.
    """
    def raw_or_none(pair: tuple[np.ndarray, float]) -> float | None:
        try:
            return estimate_rt60_raw(pair[0], config, params)
        except (DecayError, InputError) as e:
            logger.warning(f'Skipping calibration pair (RT60 {pair[1]:.2f} s): {e}')
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        estimates = list(pool.map(raw_or_none, pairs))
    used = [(raw, pair[1]) for raw, pair in zip(estimates, pairs) if raw is not None]
    if not used:
        raise CalibrationError('no usable calibration pairs: every raw estimate failed')
    raw, true = zip(*used)
    return fit_calibration(raw, true)


def estimate_rt60(signal: np.ndarray, config: StftConfig, cal: Calibration,
                  params: BlindRt60Config = BlindRt60Config()) -> float:
    """
    Calibrated blind RT60, clamped to [0.05, 3.0] s
    """
    return cal.apply(estimate_rt60_raw(signal, config, params))
