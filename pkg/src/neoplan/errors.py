"""Exception types shared across the package."""


class NeoplanError(Exception):
    """Base class for all package errors."""


class CycleDetected(NeoplanError):
    pass


class ShapeMismatch(NeoplanError):
    def __init__(self, msg, node_id=None):
        super().__init__(msg)
        self.node_id = node_id


class WrongLayout(NeoplanError):
    pass


class IndivisibleChannel(NeoplanError):
    pass


class ScheduleInvalid(NeoplanError):
    pass


class NonConstantStatistics(NeoplanError):
    pass


class AssignmentIncomplete(NeoplanError):
    pass


class StateExplosion(NeoplanError):
    pass


class Infeasible(NeoplanError):
    pass


class MissingSchedule(NeoplanError):
    pass


class CorruptDb(NeoplanError):
    pass


class CorruptModel(NeoplanError):
    pass


class InputMismatch(NeoplanError):
    pass
