# This file implements the reverb-match command line: RIR synthesis, reverberation, RT60
# estimation and calibration, dereverberation, pair generation and evaluation.
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from enum import StrEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ctf_operator, dereverb_solver, metrics, rir_model, rt60_blind, wav_io
from .errors import InputError, ReverbMatchError
from .stft_core import StftConfig, istft, stft

logger = logging.getLogger(__name__)

THREADS_ENV = 'REVERB_MATCH_THREADS'
MANIFEST_HEADER = ('path_reverb', 'path_dry', 'rt60_seconds')
LOG_FORMAT = '<%(levelname)s> %(name)s.%(funcName)s(): %(message)s'


class UsageError(Exception):
    code = 'E_USAGE'


class ReverbMode(StrEnum):
    TIME = 'time'  # direct time-domain convolution
    CTF = 'ctf'  # full-band CTF
    CTF_BANDED = 'ctf-banded'  # CTF limited to --band-radius


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f'must be a positive integer, got {text}')
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f'must be positive, got {text}')
    return value


def _band_radius(text: str) -> int:
    value = int(text)
    limit = StftConfig().n_bands // 2
    if not 0 <= value <= limit:
        raise argparse.ArgumentTypeError(f'must lie in [0, {limit}], got {text}')
    return value


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, '1')
    try:
        workers = int(raw)
    except ValueError:
        raise UsageError(f'{THREADS_ENV} must be a positive integer, got {raw!r}') from None
    if workers < 1:
        raise UsageError(f'{THREADS_ENV} must be a positive integer, got {raw!r}')
    return workers


def _load(path: str, args: argparse.Namespace) -> wav_io.WavBuffer:
    return wav_io.read_wav(path, resample=args.resample, mixdown=args.mixdown)


def _save(path: str, samples: np.ndarray) -> None:
    wav_io.write_wav(path, wav_io.WavBuffer(samples))


def cmd_synth_rir(args: argparse.Namespace) -> None:
    rir_len = None if args.len_s is None else math.ceil(args.len_s * wav_io.PROCESSING_RATE)
    params = rir_model.AcousticParams(args.rt60, mixing_time=round(args.nm_ms * wav_io.PROCESSING_RATE / 1000),
                                      sigma=args.sigma, rir_len=rir_len)
    rir = rir_model.synth_rir(params, args.seed, noise=args.noise)
    _save(args.output, rir.samples)


def reverberate(signal: np.ndarray, rir: rir_model.Rir, mode: ReverbMode,
                band_radius: int = ctf_operator.DEFAULT_BAND_RADIUS,
                config: StftConfig = StftConfig()) -> np.ndarray:
    """
    Convolves signal with rir, either directly or through the CTF in the STFT domain.
    Both routes return len(signal) + len(rir) - 1 samples.
    """
    out_len = len(signal) + len(rir) - 1
    match mode:
        case ReverbMode.TIME:
            return ctf_operator.time_convolve(signal, rir)
        case ReverbMode.CTF:
            band_radius = config.n_bands // 2
    lead = config.lead_in
    spec = stft(np.concatenate([np.zeros(lead), signal]), config)
    ctf = ctf_operator.compute_ctf(rir, config, band_radius)
    wet = ctf_operator.ctf_convolve(spec, ctf)
    return istft(wet, lead + out_len)[lead:]


def cmd_reverberate(args: argparse.Namespace) -> None:
    signal = _load(args.input, args).samples
    rir = rir_model.Rir(_load(args.rir, args).samples, wav_io.PROCESSING_RATE)
    _save(args.output, reverberate(signal, rir, args.mode, args.band_radius))


def cmd_estimate_rt60(args: argparse.Namespace) -> None:
    cal = rt60_blind.Calibration.identity() if args.cal is None else rt60_blind.Calibration.load(args.cal)
    rt60 = rt60_blind.estimate_rt60(_load(args.input, args).samples, StftConfig(), cal)
    print(f'{rt60:.4f}')


def read_manifest(path: str | Path) -> list[tuple[Path, Path, float]]:
    """
    Reads a pair manifest; relative paths resolve against the manifest's directory
    """
    base = Path(path).parent
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise InputError(f'{path}: manifest header must be {",".join(MANIFEST_HEADER)}')
        return [(base / row['path_reverb'], base / row['path_dry'], float(row['rt60_seconds']))
                for row in reader]


def cmd_calibrate_rt60(args: argparse.Namespace) -> None:
    pairs = [(_load(str(reverb), args).samples, rt60) for reverb, _, rt60 in read_manifest(args.manifest)]
    cal = rt60_blind.calibrate(pairs, StftConfig(), workers=worker_count())
    logger.info(f'Calibrated on {cal.n_pairs} of {len(pairs)} pairs')
    cal.save(args.output)


def cmd_dereverb(args: argparse.Namespace) -> None:
    signal = _load(args.input, args).samples
    if args.blind:
        if args.cal is None:
            raise UsageError('--blind requires --cal')
        source = dereverb_solver.Rt60Source.blind(rt60_blind.Calibration.load(args.cal))
    elif args.oracle_rir is not None:
        rir = rir_model.Rir(_load(args.oracle_rir, args).samples, wav_io.PROCESSING_RATE)
        source = dereverb_solver.Rt60Source.oracle(rir)
    else:
        source = dereverb_solver.Rt60Source.given(args.rt60)
    solver = dereverb_solver.SolverConfig(steps=args.steps, step_size=args.step_size,
                                          band_radius=args.band_radius, seed=args.seed,
                                          optimizer=args.optimizer, freeze_rir=args.freeze_rir)
    dry, report = dereverb_solver.dereverb(signal, source, StftConfig(), solver)
    _save(args.output, dry)
    if args.report is not None:
        Path(args.report).write_text(report.to_json() + '\n')


def cmd_make_pairs(args: argparse.Namespace) -> None:
    paths = sorted(Path(args.dry_dir).glob('*.wav'))
    dry_signals = [_load(str(path), args).samples for path in paths]
    pairs = dereverb_solver.make_pairs(dry_signals, (args.rt60_min, args.rt60_max), args.count, args.seed,
                                       segment_len=args.segment_len, workers=worker_count())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_dir = Path(args.output).resolve().parent
    rows = []
    for i, pair in enumerate(pairs):
        reverb_path, dry_path = out_dir / f'reverb_{i:04d}.wav', out_dir / f'dry_{i:04d}.wav'
        _save(str(reverb_path), pair.reverberant)
        _save(str(dry_path), pair.dry)
        rows.append((os.path.relpath(reverb_path.resolve(), manifest_dir),
                     os.path.relpath(dry_path.resolve(), manifest_dir), repr(pair.rt60)))
    with open(args.output, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def cmd_eval(args: argparse.Namespace) -> None:
    report = metrics.evaluate(_load(args.ref, args).samples, _load(args.est, args).samples)
    print(json.dumps(report.to_dict()))


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument('--resample', action='store_true', help='resample inputs to 16 kHz')
    common.add_argument('--mixdown', action='store_true', help='average multichannel inputs to mono')

    parser = CliParser(prog='reverb-match', description='Dereverberation by reverberation matching')
    parser.add_argument('--debug', action='store_true', help='enable debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('synth-rir', parents=[common], help='synthesize a Polack RIR')
    p.add_argument('--rt60', type=float, required=True)
    p.add_argument('--nm-ms', type=float, default=1000 * rir_model.MIXING_TIME_S)
    p.add_argument('--sigma', type=float, default=rir_model.NOISE_SIGMA)
    p.add_argument('--len-s', type=float, default=None)
    p.add_argument('--noise', type=rir_model.NoiseKind, choices=list(rir_model.NoiseKind),
                   default=rir_model.NoiseKind.HALF_NORMAL)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(handler=cmd_synth_rir)

    p = commands.add_parser('reverberate', parents=[common], help='convolve a signal with an RIR')
    p.add_argument('input')
    p.add_argument('--rir', required=True)
    p.add_argument('--mode', type=ReverbMode, choices=list(ReverbMode), default=ReverbMode.TIME)
    p.add_argument('--band-radius', type=_band_radius, default=ctf_operator.DEFAULT_BAND_RADIUS)
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(handler=cmd_reverberate)

    p = commands.add_parser('estimate-rt60', parents=[common], help='blind RT60 estimate in seconds')
    p.add_argument('input')
    p.add_argument('--cal', default=None)
    p.set_defaults(handler=cmd_estimate_rt60)

    p = commands.add_parser('calibrate-rt60', parents=[common], help='fit the blind RT60 calibration')
    p.add_argument('--manifest', required=True)
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(handler=cmd_calibrate_rt60)

    p = commands.add_parser('dereverb', parents=[common], help='dereverberate a recording')
    p.add_argument('input')
    p.add_argument('-o', '--output', required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--rt60', type=float)
    source.add_argument('--blind', action='store_true')
    source.add_argument('--oracle-rir')
    p.add_argument('--cal', default=None)
    p.add_argument('--steps', type=_positive_int, default=500)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--step-size', type=_positive_float, default=1e-2)
    p.add_argument('--band-radius', type=_band_radius, default=ctf_operator.DEFAULT_BAND_RADIUS)
    p.add_argument('--optimizer', type=dereverb_solver.OptimizerKind, choices=list(dereverb_solver.OptimizerKind),
                   default=dereverb_solver.OptimizerKind.ADAM)
    p.add_argument('--freeze-rir', action='store_true')
    p.add_argument('--report', default=None)
    p.set_defaults(handler=cmd_dereverb)

    p = commands.add_parser('make-pairs', parents=[common], help='generate reverberant/dry pairs')
    p.add_argument('--dry-dir', required=True)
    p.add_argument('--count', type=int, required=True)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--rt60-min', type=float, default=0.2)
    p.add_argument('--rt60-max', type=float, default=1.0)
    p.add_argument('--segment-len', type=int, default=None)
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(handler=cmd_make_pairs)

    p = commands.add_parser('eval', parents=[common], help='SISDR and log-spectral distance as JSON')
    p.add_argument('--ref', required=True)
    p.add_argument('--est', required=True)
    p.set_defaults(handler=cmd_eval)
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    """
    Runs one command; returns 0 on success, 1 on usage errors and 2 on processing errors
    """
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.debug else logging.WARNING,
                            format=LOG_FORMAT, stream=sys.stderr, force=True)
        args.handler(args)
    except UsageError as e:
        print(f'{e.code}: {e}', file=sys.stderr)
        return 1
    except ReverbMatchError as e:
        print(f'{e.code}: {e}', file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as e:
        print(f'E_IO: {e}', file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else 0
    return 0


def main():
    sys.exit(run_cli())


if __name__ == '__main__':
    main()
