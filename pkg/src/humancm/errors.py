"""Exception types shared across the package.

The CLI maps these onto exit codes: config errors -> 2, artifact
mismatches -> 3, numerical failures -> 4.
"""


class InvalidArgument(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ArtifactMismatch(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass
