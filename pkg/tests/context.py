import math

import numpy as np

from reverb_match import (cli, ctf_operator, dereverb_solver, errors, metrics, reverb_loss,  # noqa
                          rir_model, rt60_blind, stft_core, wav_io)

FS = 16000


def speech_like(rng: np.random.Generator, seconds: float, fs: int = FS,
                burst_s: tuple[float, float] = (0.1, 0.25)) -> np.ndarray:
    """
    Voiced-like bursts of burst_s seconds (harmonics of a random f0 with 1/k amplitudes up to 4 kHz,
    plus a breath noise component) separated by 0.35 to 0.6 s of silence. Starts with silence.
    """
    n = int(seconds * fs)
    out = np.zeros(n)
    ramp = int(0.01 * fs)
    t = int(rng.uniform(0.35, 0.6) * fs)
    while t < n:
        length = int(rng.uniform(*burst_s) * fs)
        f0 = rng.uniform(100, 250)
        k = np.arange(1, int(4000 // f0) + 1)
        phases = rng.uniform(0, 2 * np.pi, k.size)
        time = np.arange(length)[:, None] / fs
        burst = (np.sin(2 * np.pi * f0 * k * time + phases) / k).sum(axis=1)
        burst += 0.3 * rng.standard_normal(length)
        envelope = np.ones(length)
        envelope[:ramp] = np.linspace(0, 1, ramp)
        envelope[-ramp:] = np.linspace(1, 0, ramp)
        end = min(n, t + length)
        out[t:end] = 0.1 * (burst * envelope)[:end - t]
        t = end + int(rng.uniform(0.35, 0.6) * fs)
    return out


def gated_noise(rng: np.random.Generator, rt60: float, *, bursts: int = 3, on_s: float = 0.3,
                off_s: float = 0.7, fs: int = FS) -> np.ndarray:
    """
    White noise switched off repeatedly; each switch-off decays per sample at the rate of rt60
    """
    decay = 3 * math.log(10) / (rt60 * fs)
    segment = np.concatenate([np.ones(int(on_s * fs)), np.exp(-decay * np.arange(int(off_s * fs)))])
    envelope = np.tile(segment, bursts)
    return rng.standard_normal(envelope.size) * envelope


def reverberant_pair(seed: int, rt60: float, seconds: float = 1.5,
                     burst_s: tuple[float, float] = (0.1, 0.25)) -> tuple[np.ndarray, np.ndarray, rir_model.Rir]:
    rng = np.random.default_rng(seed)
    dry = speech_like(rng, seconds, burst_s=burst_s)
    rir = rir_model.normalize_align(rir_model.synth_rir(rir_model.AcousticParams(rt60), seed))
    return ctf_operator.time_convolve(dry, rir)[:dry.size], dry, rir
