# This file implements WAV ingestion and emission at the fixed 16 kHz mono processing rate.
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
from scipy import signal as sps

from .errors import AudioFormatError

logger = logging.getLogger(__name__)

PROCESSING_RATE = 16000
SUPPORTED_SUBTYPES = ('PCM_16', 'FLOAT')
PCM16_SCALE = 32768


@dataclass(frozen=True, eq=False)
class WavBuffer:
    """
    Represents mono audio samples, nominally in [-1, 1]
    """
    samples: np.ndarray
    sample_rate: int = PROCESSING_RATE
    channels: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if self.channels != 1 or samples.ndim != 1:
            raise AudioFormatError(f'WavBuffer must be mono, got shape {samples.shape}')
        object.__setattr__(self, 'samples', samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: str | Path, *, resample: bool = False, mixdown: bool = False) -> WavBuffer:
    """
    Reads a PCM16 or float32 WAV file as 16 kHz mono.
    Multichannel files need mixdown (channel mean), other rates need resample (polyphase).
    """
    info = sf.info(str(path))
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise AudioFormatError(f'{path}: unsupported WAV subtype {info.subtype}')
    data, sample_rate = sf.read(str(path), dtype='float64', always_2d=True)
    if data.shape[1] > 1:
        if not mixdown:
            raise AudioFormatError(f'{path}: {data.shape[1]} channels, mono expected (use --mixdown)')
        logger.debug(f'Mixing {data.shape[1]} channels of {path} down to mono')
    samples = data.mean(axis=1)
    if sample_rate != PROCESSING_RATE:
        if not resample:
            raise AudioFormatError(f'{path}: unsupported sample rate {sample_rate} Hz '
                                   f'(expected {PROCESSING_RATE}, use --resample)')
        g = math.gcd(PROCESSING_RATE, sample_rate)
        samples = sps.resample_poly(samples, PROCESSING_RATE // g, sample_rate // g)
        logger.debug(f'Resampled {path} from {sample_rate} Hz')
    return WavBuffer(samples, PROCESSING_RATE)


def write_wav(path: str | Path, buf: WavBuffer, *, subtype: str = 'FLOAT') -> None:
    """
    Writes a mono WAV file. PCM_16 output is rounded to the nearest step of 2^-15 and clipped.
    """
    match subtype:
        case 'FLOAT':
            sf.write(str(path), buf.samples.astype(np.float32), buf.sample_rate, subtype='FLOAT')
        case 'PCM_16':
            quantized = np.clip(np.round(buf.samples * PCM16_SCALE), -PCM16_SCALE, PCM16_SCALE - 1)
            sf.write(str(path), quantized.astype(np.int16), buf.sample_rate, subtype='PCM_16')
        case _:
            raise AudioFormatError(f'unsupported WAV subtype {subtype}')
