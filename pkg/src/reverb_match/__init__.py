from .dereverb_solver import Rt60Source, SolverConfig, dereverb, make_pairs
from .errors import ReverbMatchError
from .rir_model import AcousticParams, synth_rir
from .stft_core import StftConfig, istft, stft

__all__ = ['AcousticParams', 'ReverbMatchError', 'Rt60Source', 'SolverConfig', 'StftConfig',
           'dereverb', 'istft', 'make_pairs', 'stft', 'synth_rir']
