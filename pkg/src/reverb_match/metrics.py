# This file implements the objective evaluation of dereverberation output: scale-invariant SDR
# and log-spectral distance.
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError
from .stft_core import StftConfig, stft

SISDR_CAP_DB = 100.0
LSD_FLOOR = 1e-8


@dataclass(frozen=True)
class MetricReport:
    """
    Represents the metrics of one estimate against its reference
    """
    sisdr_db: float
    lsd_db: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def sisdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """
    Scale-invariant SDR in dB, capped at +-100 dB. Both signals are cut to the shorter length.
    """
    n = min(len(reference), len(estimate))
    ref = np.asarray(reference, dtype=float)[:n]
    est = np.asarray(estimate, dtype=float)[:n]
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0:
        raise InputError('silent reference')
    target = np.dot(est, ref) / ref_energy * ref
    noise = est - target
    target_energy = float(np.dot(target, target))
    noise_energy = float(np.dot(noise, noise))
    if noise_energy == 0:
        return SISDR_CAP_DB
    if target_energy == 0:
        return -SISDR_CAP_DB
    return float(np.clip(10 * np.log10(target_energy / noise_energy), -SISDR_CAP_DB, SISDR_CAP_DB))


def log_spectral_distance(reference: np.ndarray, estimate: np.ndarray,
                          config: StftConfig = StftConfig()) -> float:
    """
    RMS over frames of the per-frame RMS difference of 20 log10(|STFT| + 1e-8)
    """
    if abs(len(reference) - len(estimate)) > config.hop:
        raise InputError(f'Length mismatch beyond one frame: {len(reference)} vs {len(estimate)}')
    n = min(len(reference), len(estimate))
    ref_db = 20 * np.log10(np.abs(stft(np.asarray(reference)[:n], config).data) + LSD_FLOOR)
    est_db = 20 * np.log10(np.abs(stft(np.asarray(estimate)[:n], config).data) + LSD_FLOOR)
    per_frame = np.sqrt(np.mean((ref_db - est_db) ** 2, axis=0))
    return float(np.sqrt(np.mean(per_frame ** 2)))


def evaluate(reference: np.ndarray, estimate: np.ndarray,
             config: StftConfig = StftConfig()) -> MetricReport:
    return MetricReport(sisdr(reference, estimate), log_spectral_distance(reference, estimate, config))
