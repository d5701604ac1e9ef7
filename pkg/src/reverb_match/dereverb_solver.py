# This file implements dereverberation by direct gradient descent on the dry STFT under the
# reverberation-matching loss, drawing a fresh synthetic RIR at every step, plus the generator
# of synthetic (reverberant, dry) training pairs.
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum, auto
from typing import NamedTuple, Sequence

import numpy as np

from .ctf_operator import DEFAULT_BAND_RADIUS, compute_ctf, time_convolve
from .errors import ConfigError, InputError
from .reverb_loss import LossParams, loss_gradient
from .rir_model import AcousticParams, Rir, normalize_align, schroeder_rt60, synth_rir
from .rt60_blind import Calibration, estimate_rt60
from .stft_core import ComplexSpectrogram, StftConfig, istft, stft

logger = logging.getLogger(__name__)

class Rt60SourceKind(StrEnum):
    GIVEN = auto()  # RT60 in seconds
    ORACLE = auto()  # measured on the true RIR
    BLIND = auto()  # estimated from the signal with a calibration


class Rt60Source(NamedTuple):
    kind: Rt60SourceKind
    seconds: float | None = None
    rir: Rir | None = None
    calibration: Calibration | None = None

    @staticmethod
    def given(seconds: float) -> Rt60Source:
        return Rt60Source(Rt60SourceKind.GIVEN, seconds=seconds)

    @staticmethod
    def oracle(rir: Rir) -> Rt60Source:
        return Rt60Source(Rt60SourceKind.ORACLE, rir=rir)

    @staticmethod
    def blind(calibration: Calibration) -> Rt60Source:
        return Rt60Source(Rt60SourceKind.BLIND, calibration=calibration)


class OptimizerKind(StrEnum):
    ADAM = auto()  # first/second moment scaling
    SGD = auto()  # plain gradient descent


@dataclass(frozen=True)
class SolverConfig:
    """
    Represents the optimization settings of a dereverberation run
    """
    steps: int = 500
    step_size: float = 1e-2
    band_radius: int = DEFAULT_BAND_RADIUS
    seed: int = 0
    log_every: int = 10
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_rir: bool = False  # reuse the first RIR draw at every step
    normalize: bool = True  # optimize on a spectrogram of unit peak magnitude
    loss: LossParams = field(default_factory=LossParams)

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f'steps must be at least 1, got {self.steps}')
        if not self.step_size > 0:
            raise ConfigError(f'step size must be positive, got {self.step_size}')
        if self.log_every < 1:
            raise ConfigError(f'log_every must be at least 1, got {self.log_every}')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f'Adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})')


@dataclass(frozen=True)
class SolveReport:
    """
    Represents the outcome of a solve: the loss at every logged step, in normalized units
    when SolverConfig.normalize is set
    """
    loss_trace: list[float]
    rt60_used: float
    final_loss: float

    def to_json(self) -> str:
        return json.dumps({'loss_trace': self.loss_trace, 'rt60_used': self.rt60_used,
                           'final_loss': self.final_loss}, indent=2)


class PairRecord(NamedTuple):
    reverberant: np.ndarray
    dry: np.ndarray
    rt60: float


class DereverbSolver:
    config: StftConfig
    solver: SolverConfig

    def __init__(self, config: StftConfig = StftConfig(), solver: SolverConfig = SolverConfig()):
        self.config = config
        self.solver = solver

    def resolve_rt60(self, signal: np.ndarray, source: Rt60Source) -> float:
        match source.kind:
            case Rt60SourceKind.GIVEN:
                if source.seconds is None or not source.seconds > 0:
                    raise ConfigError(f'Given RT60 must be positive, got {source.seconds}')
                return float(source.seconds)
            case Rt60SourceKind.ORACLE:
                if source.rir is None:
                    raise ConfigError('Oracle RT60 source needs an RIR')
                return schroeder_rt60(source.rir)
            case Rt60SourceKind.BLIND:
                if source.calibration is None:
                    raise ConfigError('Blind RT60 source needs a calibration')
                return estimate_rt60(signal, self.config, source.calibration)
        raise ConfigError(f'Unknown RT60 source {source.kind!r}')

    def solve(self, signal: np.ndarray, source: Rt60Source) -> tuple[np.ndarray, SolveReport]:
        x = np.asarray(signal, dtype=float)
        if x.ndim != 1 or x.size < self.config.sample_rate:
            raise InputError(f'Dereverberation needs at least 1 s of mono signal, got {x.size} samples')
        rt60 = self.resolve_rt60(x, source)
        lead = self.config.lead_in
        observed, scale = self.observe(x)
        logger.info(f'Solving {x.size / self.config.sample_rate:.2f} s with RT60 {rt60:.3f} s, '
                    f'{self.solver.steps} {self.solver.optimizer} steps')

        s_hat, trace = self.optimize(observed, AcousticParams(rt60, sample_rate=self.config.sample_rate))
        dry = istft(ComplexSpectrogram(s_hat * scale, self.config), lead + x.size)[lead:]
        return dry, SolveReport(trace, rt60, trace[-1])

    def observe(self, signal: np.ndarray) -> tuple[ComplexSpectrogram, float]:
        """
        STFT of the lead-in padded signal, divided by its peak magnitude when normalizing
        """
        observed = stft(np.concatenate([np.zeros(self.config.lead_in), signal]), self.config)
        scale = float(np.max(np.abs(observed.data)))
        if not self.solver.normalize or scale == 0:
            scale = 1.0
        return ComplexSpectrogram(observed.data / scale, self.config), scale

    def optimize(self, observed: ComplexSpectrogram, acoustic: AcousticParams) -> tuple[np.ndarray, list[float]]:
        solver = self.solver
        seeds = np.random.SeedSequence(solver.seed).spawn(1 if solver.freeze_rir else solver.steps)
        s_hat = observed.data.copy()
        moment = np.zeros_like(s_hat)
        second_re = np.zeros(s_hat.shape)
        second_im = np.zeros(s_hat.shape)
        trace = []
        for step in range(solver.steps):
            rir = synth_rir(acoustic, seeds[0 if solver.freeze_rir else step])
            ctf = compute_ctf(rir, self.config, solver.band_radius)
            loss, image = loss_gradient(ComplexSpectrogram(s_hat, self.config), observed, ctf, solver.loss)
            if step % solver.log_every == 0 or step == solver.steps - 1:
                trace.append(loss)
                logger.debug(f'step {step}: loss {loss:.6g}')
            grad = 2 * image.data
            match solver.optimizer:
                case OptimizerKind.ADAM:
                    moment = solver.beta1 * moment + (1 - solver.beta1) * grad
                    second_re = solver.beta2 * second_re + (1 - solver.beta2) * grad.real ** 2
                    second_im = solver.beta2 * second_im + (1 - solver.beta2) * grad.imag ** 2
                    m_hat = moment / (1 - solver.beta1 ** (step + 1))
                    v_re = second_re / (1 - solver.beta2 ** (step + 1))
                    v_im = second_im / (1 - solver.beta2 ** (step + 1))
                    s_hat -= solver.step_size * (m_hat.real / (np.sqrt(v_re) + solver.adam_eps)
                                                 + 1j * m_hat.imag / (np.sqrt(v_im) + solver.adam_eps))
                case OptimizerKind.SGD:
                    s_hat -= solver.step_size * grad
        return s_hat, trace


def dereverb(signal: np.ndarray, source: Rt60Source, config: StftConfig = StftConfig(),
             solver: SolverConfig = SolverConfig()) -> tuple[np.ndarray, SolveReport]:
    """
    Dereverberates a mono signal; the output has the input's length
    """
    return DereverbSolver(config, solver).solve(signal, source)


def make_pairs(dry_signals: Sequence[np.ndarray], rt60_range: tuple[float, float] = (0.2, 1.0),
               count: int = 100, seed: int = 0, *, sample_rate: int = 16000,
               segment_len: int | None = None, workers: int = 1) -> list[PairRecord]:
    """
    Reverberates randomly chosen dry signals with synthetic RIRs of uniformly drawn RT60.
    All random draws happen up front, so the result does not depend on workers.
    """
    if not dry_signals:
        raise InputError('Pair generation needs at least one dry signal')
    low, high = rt60_range
    if not 0 < low <= high:
        raise ConfigError(f'Invalid RT60 range [{low}, {high}]')
    if count < 0:
        raise ConfigError(f'count must be non-negative, got {count}')
    if segment_len is not None and segment_len < 1:
        raise ConfigError(f'segment length must be positive, got {segment_len}')

    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(count):
        index = int(rng.integers(len(dry_signals)))
        rt60 = float(rng.uniform(low, high))
        rir_seed = int(rng.integers(2 ** 32))
        crop = float(rng.random())
        draws.append((index, rt60, rir_seed, crop))

    def build(draw: tuple[int, float, int, float]) -> PairRecord:
        index, rt60, rir_seed, crop = draw
        dry = np.asarray(dry_signals[index], dtype=float)
        if segment_len is not None and dry.size > segment_len:
            start = int(crop * (dry.size - segment_len + 1))
            dry = dry[start:start + segment_len]
        rir = normalize_align(synth_rir(AcousticParams(rt60, sample_rate=sample_rate), rir_seed))
        return PairRecord(time_convolve(dry, rir)[:dry.size], dry, rt60)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(build, draws))
