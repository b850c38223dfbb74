"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: configuration and validation problems
exit with 2, artifact incompatibilities with 3.
"""


class NaturevalError(Exception):
    pass


class ConfigError(NaturevalError, ValueError):
    pass


class SchemaError(ConfigError):
    def __init__(self, column: str, path=None):
        self.column = column
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing column {column!r}{where}")


class ValidationError(NaturevalError, ValueError):
    pass


class NumericError(NaturevalError, ArithmeticError):
    pass


class TrainingError(NaturevalError, RuntimeError):
    pass


class IncompatibleArtifactError(NaturevalError):
    pass
