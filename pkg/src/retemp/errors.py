"""Exception hierarchy. Every error the package raises derives from RetempError."""


class RetempError(Exception):
    """Base class; the CLI turns these into one-line diagnostics."""


class ShapeError(RetempError):
    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(RetempError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values (NaN or Inf)")


class GradientError(RetempError):
    """Backward misuse or a failed/ill-posed gradient check."""


class DatasetError(RetempError):
    pass


class ConfigError(RetempError):
    pass


class TrainingError(RetempError):
    pass


class CheckpointError(RetempError):
    pass
