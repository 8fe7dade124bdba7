"""Exception hierarchy shared across the package.

Every domain failure derives from MasscopeError so the CLI can map any of
them to a single non-zero exit code; usage errors are left to argparse.
"""


class MasscopeError(Exception):
    """Base class for all domain errors raised by this package."""


# --- topology / answers ---------------------------------------------------

class CyclicTopology(MasscopeError):
    """A directed cycle was found where a DAG is required."""


class Unparseable(MasscopeError):
    """No token of the required answer format could be extracted."""


# --- backends -------------------------------------------------------------

class BackendUnavailable(MasscopeError):
    """The model endpoint could not be reached after all retries."""


class EmptyResponse(MasscopeError):
    """The chat endpoint returned an empty completion."""


class JudgeParseFailure(MasscopeError):
    """The judge reply did not contain the expected verdict token."""


class ZeroVector(MasscopeError):
    """An embedding collapsed to the zero vector even after re-seeding."""


# --- execution ------------------------------------------------------------

class EmptyDataset(MasscopeError):
    """A task list or task file contained no instances."""


# --- metrics --------------------------------------------------------------

class DimensionMismatch(MasscopeError):
    """Two embedding vectors of different length were combined."""


class EmptyInput(MasscopeError):
    """Aggregation was asked to run over no records."""


# --- analysis -------------------------------------------------------------

class DegenerateVariance(MasscopeError):
    """Correlation of a constant sequence is undefined."""


class AllZeroLine(MasscopeError):
    """A row/column had no usable maximum to normalize by."""


class MissingCell(MasscopeError):
    """A (train, test) pair is absent from the transfer results."""


class DuplicateCell(MasscopeError):
    """A (train, test) pair appears more than once in the transfer results."""


class UnknownDomain(MasscopeError):
    """A domain label is not present on the required matrix axis."""


# --- optimization ---------------------------------------------------------

class TopologyMismatch(MasscopeError):
    """Traces from different topologies were mixed in one computation."""


class NoRemovableEdge(MasscopeError):
    """Every candidate edge removal would disconnect the sink."""


class NotSymmetric(MasscopeError):
    """A similarity matrix is not symmetric within tolerance."""


class NotPSD(MasscopeError):
    """A similarity matrix has a significantly negative eigenvalue."""


class PoolTooLarge(MasscopeError):
    """Team enumeration would exceed the configured subset budget."""


class EmptyPool(MasscopeError):
    """Team selection was given no candidate agents."""


class EmptyFront(MasscopeError):
    """No candidate team satisfied the size bounds."""


# --- ablation -------------------------------------------------------------

class AgentCountMismatch(MasscopeError):
    """Interchange requires both topologies to have the same agent count."""


class InvalidResult(MasscopeError):
    """An interchange produced a topology that fails validation."""


# --- failure taxonomy -----------------------------------------------------

class NoLabels(MasscopeError):
    """Failure aggregation was given no labeled occurrences."""


# --- persistence ----------------------------------------------------------

class IoError(MasscopeError):
    """A file could not be read or written."""


class SchemaViolation(MasscopeError):
    """A serialized record does not match the expected schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientData(MasscopeError):
    """A domain cannot supply its share of a mixed training set."""
