# This file implements the cross-band convolutive transfer function (CTF): the tensor built
# from a time-domain RIR, the banded time-frequency convolution and its adjoint.
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft, signal as sps

from .errors import ConfigError, InputError
from .rir_model import Rir
from .stft_core import ComplexSpectrogram, StftConfig

logger = logging.getLogger(__name__)

DEFAULT_BAND_RADIUS = 4
OFFSET_CHUNK = 16  # band offsets per FFT batch


@dataclass(frozen=True, eq=False)
class CtfTensor:
    """
    Represents a banded CTF tensor of shape F x (2F'+1) x (n_lead_frames + T_h).

    Entry (f, k, j) stores H_{f, (f+k-F') mod F, t'} for the lag t' = j - n_lead_frames.
    The first n_lead_frames lags are look-ahead lags: with overlapping left-aligned frames an
    output frame also sees the input frames that start inside it.
    """
    data: np.ndarray
    band_radius: int
    n_ctf_frames: int
    n_lead_frames: int
    config: StftConfig

    def __post_init__(self):
        expected = (self.config.n_bands, 2 * self.band_radius + 1,
                    self.n_lead_frames + self.n_ctf_frames)
        if self.data.shape != expected:
            raise ConfigError(f'CTF tensor has shape {self.data.shape}, expected {expected}')
        self.data.setflags(write=False)

    @property
    def n_offsets(self) -> int:
        return 2 * self.band_radius + 1

    @property
    def n_lags(self) -> int:
        return self.n_lead_frames + self.n_ctf_frames

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.band_radius, self.band_radius + 1)

    def lag(self, t_prime: int) -> np.ndarray:
        """
        Returns the F x (2F'+1) slice for lag t'
        """
        return self.data[:, :, t_prime + self.n_lead_frames]

    def output_frames(self, n_input_frames: int) -> int:
        return n_input_frames + self.n_ctf_frames - 1


def lead_frames(config: StftConfig) -> int:
    return (config.n_fft - 1) // config.hop


def ctf_frame_count(n_rir: int, config: StftConfig) -> int:
    return -(-(n_rir + config.n_fft - 1) // config.hop)


@lru_cache(maxsize=16)
def _window_cross_terms(config: StftConfig, band_radius: int) -> np.ndarray:
    """
    c_d(m) = sum_n w_s(n+m) w_a(n) exp(j2pi d n/F) for every offset d and m in (-N, N).
    W_{f,f+d}(m) = exp(j2pi (f+d) m/F) c_d(m) / F, so the tensor only needs these rows.
    """
    n = np.arange(config.n_fft)
    offsets = np.arange(-band_radius, band_radius + 1)
    modulated = config.analysis_window * np.exp(2j * np.pi * np.outer(offsets, n) / config.n_bands)
    terms = sps.fftconvolve(config.synthesis_window[None, :], modulated[:, ::-1], axes=1)
    terms.setflags(write=False)
    return terms


def compute_ctf(rir: Rir, config: StftConfig, band_radius: int = DEFAULT_BAND_RADIUS) -> CtfTensor:
    """
    H_{f,f',t'} = sum_{m=-N+1}^{N-1} h(t'L - m) W_{f,f'}(m), kept for |f' - f| <= band_radius
    (modulo F). Lags run from -n_lead_frames to T_h - 1, T_h = ceil((N_h + N - 1) / L).
    """
    if rir.sample_rate != config.sample_rate:
        raise ConfigError(f'RIR sample rate {rir.sample_rate} does not match {config.sample_rate}')
    n_bands, n_fft = config.n_bands, config.n_fft
    if not 0 <= band_radius <= n_bands // 2:
        raise ConfigError(f'band radius {band_radius} outside [0, {n_bands // 2}]')
    n_lead = lead_frames(config)
    n_ctf = ctf_frame_count(len(rir), config)
    lags = np.arange(-n_lead, n_ctf)
    m = np.arange(-n_fft + 1, n_fft)
    index = lags[:, None] * config.hop - m[None, :]
    inside = (index >= 0) & (index < len(rir))
    h = np.where(inside, rir.samples[np.clip(index, 0, len(rir) - 1)], 0.0)

    terms = _window_cross_terms(config, band_radius)
    offsets = np.arange(-band_radius, band_radius + 1)
    bands = np.arange(n_bands)
    data = np.empty((n_bands, offsets.size, lags.size), dtype=complex)
    for chunk in _chunks(offsets.size):
        g = h[None, :, :] * terms[chunk, None, :]
        # fold m onto residues modulo F: index p = m + N - 1 and p + N share a residue
        g = np.concatenate([g, np.zeros(g.shape[:2] + (1,))], axis=2)
        folded = g.reshape(g.shape[0], g.shape[1], 2, n_fft).sum(axis=2)
        folded = np.roll(folded, 1, axis=2)
        spectra = fft.ifft(folded, axis=2).transpose(0, 2, 1)
        rows = (bands[:, None] + offsets[None, chunk]) % n_bands
        data[:, chunk, :] = spectra[np.arange(rows.shape[1])[None, :], rows, :]
    if 2 * band_radius == n_bands:
        # offsets -F/2 and +F/2 address the same bin
        data[:, -1, :] = 0
    logger.debug(f'CTF tensor: {n_bands} bands, {offsets.size} offsets, {lags.size} lags')
    return CtfTensor(data, band_radius, n_ctf, n_lead, config)


def _chunks(n: int) -> list[slice]:
    return [slice(i, min(i + OFFSET_CHUNK, n)) for i in range(0, n, OFFSET_CHUNK)]


def _check_config(spec: ComplexSpectrogram, ctf: CtfTensor) -> None:
    if spec.config != ctf.config:
        raise ConfigError(f'Spectrogram config {spec.config} does not match CTF config {ctf.config}')


def ctf_convolve(spec: ComplexSpectrogram, ctf: CtfTensor) -> ComplexSpectrogram:
    """
    Y_{f,t} = sum_{|f'-f| <= F'} sum_{t'} H_{f,f',t'} S_{f',t-t'} with bins taken modulo F.
    The output has T_s + T_h - 1 frames; input frames outside [0, T_s) are zero.
    """
    _check_config(spec, ctf)
    n_bands = ctf.config.n_bands
    n_in = spec.n_frames
    n_out = ctf.output_frames(n_in)
    n_time = fft.next_fast_len(n_in + ctf.n_lags - 1)
    source = fft.fft(spec.data, n=n_time, axis=1)
    bands = np.arange(n_bands)
    accumulated = np.zeros((n_bands, n_time), dtype=complex)
    for chunk in _chunks(ctf.n_offsets):
        kernel = fft.fft(ctf.data[:, chunk, :], n=n_time, axis=2)
        rows = (bands[:, None] + ctf.offsets[None, chunk]) % n_bands
        accumulated += np.einsum('fkw,fkw->fw', kernel, source[rows])
    full = fft.ifft(accumulated, axis=1)
    return ComplexSpectrogram(full[:, ctf.n_lead_frames:ctf.n_lead_frames + n_out], ctf.config)


def ctf_adjoint(residual: ComplexSpectrogram, ctf: CtfTensor) -> ComplexSpectrogram:
    """
    Adjoint of ctf_convolve for <a, b> = sum conj(a) b: maps T_y frames back to
    T_s = T_y - T_h + 1 frames such that <C(S), R> = <S, C^H(R)>.
    """
    _check_config(residual, ctf)
    n_bands = ctf.config.n_bands
    n_out = residual.n_frames
    n_in = n_out - ctf.n_ctf_frames + 1
    if n_in < 1:
        raise InputError(f'Residual has {n_out} frames, fewer than the {ctf.n_ctf_frames} CTF frames')
    n_time = fft.next_fast_len(n_out + ctf.n_lead_frames)
    target = fft.fft(residual.data, n=n_time, axis=1)
    bands = np.arange(n_bands)
    accumulated = np.zeros((n_bands, n_time), dtype=complex)
    for chunk in _chunks(ctf.n_offsets):
        kernel = fft.fft(ctf.data[:, chunk, :], n=n_time, axis=2)
        correlated = np.conj(kernel) * target[:, None, :]
        # input bin g received output bin (g - d) through offset d
        rows = (bands[:, None] - ctf.offsets[None, chunk]) % n_bands
        columns = np.arange(rows.shape[1])[None, :]
        accumulated += correlated[rows, columns, :].sum(axis=1)
    full = fft.ifft(accumulated, axis=1)
    image = np.roll(full, ctf.n_lead_frames, axis=1)[:, :n_in]
    return ComplexSpectrogram(image, ctf.config)


def time_convolve(signal: np.ndarray, rir: Rir) -> np.ndarray:
    """
    Full linear convolution s * h of length len(s) + N_h - 1
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InputError('empty input')
    return sps.fftconvolve(x, rir.samples, mode='full')
