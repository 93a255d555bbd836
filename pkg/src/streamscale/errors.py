"""Exception hierarchy shared by the runtime, state, protocol and control layers."""


class StreamScaleError(Exception):
    """Base class for every error raised by this package."""


# graph / runtime
class GraphCycle(StreamScaleError):
    pass


class InvalidPartitioning(StreamScaleError):
    pass


class ChannelClosed(StreamScaleError):
    pass


class SenderMismatch(StreamScaleError):
    pass


class SimulationDrained(StreamScaleError):
    pass


class DuplicateCheckpoint(StreamScaleError):
    pass


# state
class IncompleteTable(StreamScaleError):
    pass


class IllegalStateTransition(StreamScaleError):
    pass


class DuplicateChunk(StreamScaleError):
    pass


class UnexpectedChunk(StreamScaleError):
    pass


# protocol
class ProtocolError(StreamScaleError):
    pass


class SubscaleOverlap(ProtocolError):
    pass


class StaleTrigger(ProtocolError):
    pass


class DuplicateConfirm(ProtocolError):
    pass


class NotMigrated(ProtocolError):
    pass


# control plane
class UnknownOperator(StreamScaleError):
    pass


class DeployConflict(StreamScaleError):
    pass


class SessionIncomplete(StreamScaleError):
    pass


# harness
class MalformedRecord(StreamScaleError):
    pass


class WatermarkRegression(StreamScaleError):
    pass


class IncompleteTrace(StreamScaleError):
    pass
