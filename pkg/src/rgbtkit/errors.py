"""Exception hierarchy.

``ValidationError`` marks bad input (the CLI maps it to exit code 1); every
other ``RgbtError`` is a runtime failure (exit code 2).
"""


class RgbtError(Exception):
    pass


class ValidationError(RgbtError, ValueError):
    pass


class DomainError(ValidationError):
    """A numeric argument lies outside the operation's domain."""


class UnsupportedModelError(ValidationError):
    pass


class BehindCameraError(DomainError):
    pass


class ProtocolError(ValidationError):
    """Evaluation inputs cannot support the requested protocol."""


class UndefinedRecallError(RgbtError):
    pass


class TrainingError(RgbtError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
