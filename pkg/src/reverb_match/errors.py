"""Exceptions raised by reverb_match. Each carries a stable ``code`` for the CLI."""


class ReverbMatchError(ValueError):
    code = 'E_REVERB'


class InputError(ReverbMatchError):
    """
    Raised on empty, silent or too short inputs
    """
    code = 'E_INPUT'


class ConfigError(ReverbMatchError):
    """
    Raised on invalid parameters or mismatched configurations
    """
    code = 'E_CONFIG'


class DecayError(ReverbMatchError):
    """
    Raised when a decay cannot be measured
    """
    code = 'E_DECAY'


class CalibrationError(ReverbMatchError):
    code = 'E_CALIB'


class AudioFormatError(ReverbMatchError):
    code = 'E_AUDIO'
