"""Exception types raised across the package.

The CLI maps these families onto exit codes (see ``xmseg.cli``).
"""


class XmsegError(Exception):
    pass


class InvalidArgumentError(XmsegError, ValueError):
    pass


class OutOfRangeError(InvalidArgumentError):
    pass


class UnknownNameError(InvalidArgumentError):
    """An enumerated name (recipe, report format, sampling mode, ...) is not known."""

    def __init__(self, kind, name, valid):
        self.kind = kind
        self.name = name
        self.valid = sorted(valid)
        super().__init__(
            f"Unknown {kind} `{name}`. Supported values are: {', '.join(self.valid)}."
        )


class ConfigError(XmsegError, ValueError):
    pass


class EmptyBatchError(XmsegError):
    pass


class EmptyDataError(XmsegError):
    pass


class EmptyEvaluationError(XmsegError):
    pass


class ManifestViolationError(XmsegError):
    pass


class SplitMisuseError(XmsegError):
    pass


class DependencyError(XmsegError):
    pass


class NonFiniteLossError(XmsegError, FloatingPointError):
    def __init__(self, msg, components=None):
        self.components = dict(components or {})
        super().__init__(msg)
