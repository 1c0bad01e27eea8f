"""Exception types. Every error carries a stable machine-readable ``code``."""

from __future__ import annotations


class DecorError(ValueError):
    code = "decor-error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class InvalidSize(DecorError):
    code = "invalid-size"


class InvalidGrid(DecorError):
    code = "invalid-grid"


class TooManySubsets(DecorError):
    code = "too-many-subsets"


class InvalidCollusionLevel(DecorError):
    code = "invalid-collusion-level"


class UndefinedHeterogeneity(DecorError):
    code = "undefined-heterogeneity"


class SingularCovariance(DecorError):
    code = "singular-covariance"


class InvalidDelta(DecorError):
    code = "invalid-delta"


class GraphNotSufficientlyConnected(DecorError):
    code = "graph-not-sufficiently-connected"


class OutOfRegime(DecorError):
    code = "out-of-regime"


class UnreachableTarget(DecorError):
    code = "unreachable-target"


class InvalidTarget(DecorError):
    code = "invalid-target"


class EdgeMismatch(DecorError):
    code = "edge-mismatch"


class MissingSeed(DecorError):
    code = "missing-seed"


class InvalidConstants(DecorError):
    code = "invalid-constants"


class InvalidRegularizer(DecorError):
    code = "invalid-regularizer"


class ParseError(DecorError):
    code = "parse-error"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TooFewRows(DecorError):
    code = "too-few-rows"


class InvalidConfig(DecorError):
    code = "invalid-config"


class Diverged(DecorError):
    code = "diverged"

    def __init__(self, round_index: int, message: str = ""):
        self.round = round_index
        super().__init__(message or f"model diverged at round {round_index}")


class UnknownTopology(DecorError):
    code = "unknown-topology"


class InvalidGraph(DecorError):
    code = "invalid-graph"


class InvalidMixingMatrix(DecorError):
    code = "invalid-mixing-matrix"


class InvalidAdversary(DecorError):
    code = "invalid-adversary"


class InvalidNoise(DecorError):
    code = "invalid-noise"


class InvalidProblem(DecorError):
    code = "invalid-problem"
