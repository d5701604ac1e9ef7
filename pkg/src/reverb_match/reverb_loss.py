# This file implements the reverberation-matching loss between a re-reverberated estimate and
# the observed reverberant spectrogram, and its gradient with respect to the dry estimate.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctf_operator import CtfTensor, ctf_adjoint, ctf_convolve
from .errors import ConfigError, InputError
from .stft_core import ComplexSpectrogram


@dataclass(frozen=True)
class LossParams:
    """
    Represents the loss weights: lam scales the log-magnitude term, gamma compresses
    magnitudes inside the logarithm, eps guards the gradient at |Y_hat| = 0.
    """
    lam: float = 1.0
    gamma: float = 1.0
    eps: float = 1e-12

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f'lambda must be non-negative, got {self.lam}')
        if not self.gamma > 0:
            raise ConfigError(f'gamma must be positive, got {self.gamma}')
        if not 0 < self.eps <= 1e-8:
            raise ConfigError(f'eps must lie in (0, 1e-8], got {self.eps}')


def _aligned(est: ComplexSpectrogram, ref: ComplexSpectrogram) -> tuple[np.ndarray, np.ndarray]:
    if est.config.n_bands != ref.config.n_bands:
        raise ConfigError(f'Band count mismatch: {est.config.n_bands} != {ref.config.n_bands}')
    n_frames = max(est.n_frames, ref.n_frames)
    return est.pad_frames(n_frames).data, ref.pad_frames(n_frames).data


def _log_ratio(est: np.ndarray, ref: np.ndarray, params: LossParams) -> np.ndarray:
    return np.log1p(params.gamma * np.abs(est)) - np.log1p(params.gamma * np.abs(ref))


def reverb_match_loss(est: ComplexSpectrogram, ref: ComplexSpectrogram,
                      params: LossParams = LossParams()) -> float:
    """
    L = sum_{f,t} |Y_hat - Y|^2 + lam * ln((1 + gamma |Y_hat|) / (1 + gamma |Y|))^2.
    The shorter spectrogram is zero-padded in frames.
    """
    y_hat, y = _aligned(est, ref)
    return float(np.sum(np.abs(y_hat - y) ** 2) + params.lam * np.sum(_log_ratio(y_hat, y, params) ** 2))


def loss_gradient(dry_est: ComplexSpectrogram, ref: ComplexSpectrogram, ctf: CtfTensor,
                  params: LossParams = LossParams()) -> tuple[float, ComplexSpectrogram]:
    """
    Evaluates the loss at Y_hat = ctf_convolve(dry_est, ctf) and its gradient image G,
    with (dL/dRe S, dL/dIm S) = (2 Re G, 2 Im G). The pointwise sensitivity on Y_hat is
    pulled back through ctf_adjoint.
    """
    if ref.n_frames < dry_est.n_frames:
        raise InputError(f'Reference has {ref.n_frames} frames, fewer than the estimate ({dry_est.n_frames})')
    reverberated = ctf_convolve(dry_est, ctf)
    y_hat, y = _aligned(reverberated, ref)
    log_ratio = _log_ratio(y_hat, y, params)
    loss = float(np.sum(np.abs(y_hat - y) ** 2) + params.lam * np.sum(log_ratio ** 2))

    magnitude = np.maximum(np.abs(y_hat), params.eps)
    sensitivity = (y_hat - y) + params.lam * log_ratio * params.gamma \
        / ((1 + params.gamma * np.abs(y_hat)) * magnitude) * y_hat
    # frames past the convolution output do not depend on the estimate
    residual = ComplexSpectrogram(sensitivity[:, :reverberated.n_frames], ctf.config)
    return loss, ctf_adjoint(residual, ctf)
