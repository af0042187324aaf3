"""Exception hierarchy shared by every part of the lab."""


class FademlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FademlError, ValueError):
    pass


class InputError(FademlError, ValueError):
    """Shape or range mismatch on a user-supplied tensor."""


class NumericError(FademlError, ArithmeticError):
    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class TrainingError(FademlError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class AttackError(FademlError):
    pass


class CodecError(FademlError):
    pass


class IngestionError(FademlError):
    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line


class CheckpointError(FademlError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass
