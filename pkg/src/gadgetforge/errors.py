"""Exception hierarchy shared by every stage of the pipeline."""


class GadgetForgeError(Exception):
    """Base class for all pipeline errors."""


# ingest
class EmptyInput(GadgetForgeError):
    pass


class ListingSyntaxError(GadgetForgeError):
    def __init__(self, line: int, column: int, expected: str, found: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        msg = f"{line}:{column}: expected {expected}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)


class DuplicateFunction(GadgetForgeError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate function {name!r}")


class UnknownAdapter(GadgetForgeError):
    pass


class IoFailure(GadgetForgeError):
    pass


class SourceMismatch(GadgetForgeError):
    pass


# gadgets
class SeedNotInGraph(GadgetForgeError):
    pass


class EmptyGadget(GadgetForgeError):
    pass


# embedding / eval / datasets
class EmptyCorpus(GadgetForgeError):
    pass


class EmptyDataset(GadgetForgeError):
    pass


class DimensionMismatch(GadgetForgeError):
    pass


class LengthMismatch(GadgetForgeError):
    pass


class EmptyMatrix(GadgetForgeError):
    pass


# autodiff
class ShapeMismatch(GadgetForgeError):
    pass


class InvalidProbability(GadgetForgeError):
    pass


class NonScalarLoss(GadgetForgeError):
    pass


# kan / network
class InvalidKnots(GadgetForgeError):
    pass


class ScalerNotFitted(GadgetForgeError):
    pass


class AllMasked(GadgetForgeError):
    pass


class ConfigDigestMismatch(GadgetForgeError):
    pass


class CheckpointError(GadgetForgeError):
    """Bad magic, version, or truncated checkpoint/embedding file."""


# corpus / config
class InvalidSpec(GadgetForgeError):
    pass


class VerificationFailure(GadgetForgeError):
    def __init__(self, offenders: dict):
        self.offenders = dict(offenders)
        names = ", ".join(sorted(self.offenders))
        super().__init__(f"corpus verification failed for: {names}")


class ConfigError(GadgetForgeError):
    pass
