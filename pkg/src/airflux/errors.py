"""Exception types shared across the engine."""


class AirfluxError(Exception):
    pass


class GraphError(AirfluxError):
    pass


class DuplicateOperatorName(GraphError):
    pass


class DanglingEdge(GraphError):
    pass


class IllegalCycle(GraphError):
    pass


class ChannelClosed(AirfluxError):
    pass


class SpawnFailure(AirfluxError):
    pass


class ProtocolError(AirfluxError):
    """A routing or bookkeeping invariant was violated at runtime."""


class UnknownMessageKind(AirfluxError):
    pass


class NonFiniteGradient(AirfluxError):
    def __init__(self, batch_id, origin=None):
        super().__init__(f"non-finite gradient for batch {batch_id} (origin rank {origin})")
        self.batch_id = batch_id
        self.origin = origin


class DimensionMismatch(AirfluxError):
    pass


class MismatchedRankSets(AirfluxError):
    pass


class BarrierTimeout(AirfluxError):
    pass


class Deadlock(AirfluxError):
    pass


class EmptyDataset(AirfluxError):
    pass


class EmptyVocabulary(AirfluxError):
    pass


class ZeroNorm(AirfluxError):
    pass


class OracleMismatch(AirfluxError):
    pass


class ConfigError(AirfluxError):
    pass
