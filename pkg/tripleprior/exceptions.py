from typing import Any, Dict, Optional, Sequence


class TriplePriorException(Exception):
    """
    Base class for errors raised by tripleprior
    """
    pass


class ShapeError(TriplePriorException, ValueError):
    """
    Operands or inputs with incompatible extents; message carries the dimension report
    """
    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage


class NonFiniteError(TriplePriorException, FloatingPointError):
    """
    An op produced NaN or Inf from its inputs
    """
    def __init__(self, message: str, op_index: int, op_name: str):
        super().__init__(message)
        self.op_index = op_index
        self.op_name = op_name


class ScheduleError(TriplePriorException, ValueError):
    pass


class ZeroNormError(TriplePriorException, ValueError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class LabelError(TriplePriorException, ValueError):
    pass


class UnknownKindError(TriplePriorException, ValueError):
    """
    Unknown degradation kind or structural modality tag
    """
    pass


class CorpusError(TriplePriorException, IOError):
    def __init__(self, message: str, path: Any = None):
        super().__init__(message)
        self.path = path


class CheckpointError(TriplePriorException, IOError):
    pass


class CheckpointMismatchError(CheckpointError):
    """
    Checkpoint was written under a different architecture config

    ``diff`` maps each conflicting key to (checkpoint value, config value)
    """
    def __init__(self, message: str, diff: Dict[str, Sequence[Any]]):
        super().__init__(message)
        self.diff = diff


class TrainingDivergedError(TriplePriorException, FloatingPointError):
    def __init__(self, message: str, diagnostics: Dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics


class ParameterError(TriplePriorException, ValueError):
    """
    Argument outside its valid range, e.g. a severity or smoothing factor
    """
    pass


class ConfigError(TriplePriorException, ValueError):
    pass
