# This file implements the two-sided STFT used throughout the package, and the
# analysis/synthesis window cross term the cross-band transfer function is built from.
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, signal as sps

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class StftConfig:
    """
    Represents an STFT configuration: window length N, hop L and sample rate.
    The analysis window is a periodic Hann window, the synthesis window its canonical dual.
    """
    n_fft: int = 512
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_fft < 2 or self.hop < 1:
            raise ConfigError(f'Invalid STFT size: n_fft={self.n_fft}, hop={self.hop}')
        if self.hop > self.n_fft:
            raise ConfigError(f'Hop {self.hop} is longer than the window {self.n_fft}')
        if self.sample_rate <= 0:
            raise ConfigError(f'Invalid sample rate {self.sample_rate}')
        if np.any(self._overlap_energy == 0):
            raise ConfigError(f'Hann window with hop {self.hop} has no dual window')

    @property
    def n_bands(self) -> int:
        """
        Number of frequency bands F (two-sided, equal to n_fft)
        """
        return self.n_fft

    @property
    def lead_in(self) -> int:
        """
        Number of leading samples covered by a single frame only
        """
        return self.n_fft - self.hop

    @cached_property
    def analysis_window(self) -> np.ndarray:
        w = sps.get_window('hann', self.n_fft, fftbins=True)
        w.setflags(write=False)
        return w

    @cached_property
    def _overlap_energy(self) -> np.ndarray:
        # sum over k of w_a(n + kL)^2, folded onto one hop period
        squared = self.analysis_window ** 2
        periods = -(-self.n_fft // self.hop)
        padded = np.zeros(periods * self.hop)
        padded[:self.n_fft] = squared
        return padded.reshape(periods, self.hop).sum(axis=0)

    @cached_property
    def synthesis_window(self) -> np.ndarray:
        n = np.arange(self.n_fft)
        w = self.analysis_window / self._overlap_energy[n % self.hop]
        w.setflags(write=False)
        return w

    def frame_count(self, n_samples: int) -> int:
        return -(-n_samples // self.hop)


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """
    Represents a two-sided complex spectrogram of shape F x T
    """
    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ConfigError(f'Spectrogram must be 2-D, got shape {self.data.shape}')
        if self.data.shape[0] != self.config.n_bands:
            raise ConfigError(f'Spectrogram has {self.data.shape[0]} bands, '
                              f'config expects {self.config.n_bands}')

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def pad_frames(self, n_frames: int) -> ComplexSpectrogram:
        """
        Zero-pads (or truncates) the spectrogram to n_frames frames
        """
        if n_frames == self.n_frames:
            return self
        out = np.zeros((self.config.n_bands, n_frames), dtype=complex)
        keep = min(n_frames, self.n_frames)
        out[:, :keep] = self.data[:, :keep]
        return ComplexSpectrogram(out, self.config)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def stft(signal: np.ndarray, config: StftConfig) -> ComplexSpectrogram:
    """
    Left-aligned STFT: frame t covers samples [tL, tL + N), the tail is zero-padded.
    Returns ceil(len / L) frames of n_fft two-sided bins.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InputError('empty input')
    n_frames = config.frame_count(x.size)
    padded = np.zeros((n_frames - 1) * config.hop + config.n_fft)
    padded[:x.size] = x
    frames = sliding_window_view(padded, config.n_fft)[::config.hop][:n_frames]
    data = fft.fft(frames * config.analysis_window, axis=1).T
    return ComplexSpectrogram(np.ascontiguousarray(data), config)


def istft(spec: ComplexSpectrogram, out_len: int, *, real: bool = True) -> np.ndarray:
    """
    Overlap-add synthesis with the dual window, truncated or zero-padded to out_len.
    With real=False the complex overlap-add is returned untouched.
    """
    if out_len <= 0:
        raise InputError(f'Output length must be positive, got {out_len}')
    config = spec.config
    frames = fft.ifft(spec.data, axis=0).T * config.synthesis_window
    total = max(out_len, (spec.n_frames - 1) * config.hop + config.n_fft)
    out = np.zeros(total, dtype=complex)
    for t, frame in enumerate(frames):
        out[t * config.hop:t * config.hop + config.n_fft] += frame
    out = out[:out_len]
    if real:
        return out.real.copy()
    return out


def cross_window_term(config: StftConfig, f: int, f_prime: int, m: int) -> complex:
    """
    Window cross term W_{f,f'}(m) = (1/F) sum_n w_s(n+m) w_a(n) exp(j2pi(f'(n+m) - fn)/F).
    The windows are zero outside [0, N), so the term vanishes for |m| >= N.
    """
    n_fft = config.n_fft
    if abs(m) >= n_fft:
        return 0j
    n = np.arange(n_fft)
    shifted = n + m
    inside = (shifted >= 0) & (shifted < n_fft)
    w_s = np.where(inside, config.synthesis_window[np.clip(shifted, 0, n_fft - 1)], 0.0)
    phase = np.exp(2j * np.pi * (f_prime * shifted - f * n) / config.n_bands)
    return complex(np.sum(w_s * config.analysis_window * phase) / config.n_bands)
