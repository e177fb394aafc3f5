"""
Exceptions raised by the toolkit.
Commands map them to exit codes (2 for bad input, 1 for runtime failures).
"""

from typing import Optional


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition"""


class DatasetParseError(ValueError):
    """A dataset or predictions file could not be parsed"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ''
        if path is not None:
            location = f'{path}'
        if line is not None:
            location = f'{location}:{line}' if location else f'line {line}'
        super().__init__(f'{location}: {message}' if location else message)


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss"""

    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        self.value = value
        super().__init__(f'Loss became non-finite ({value}) at epoch {epoch}')
