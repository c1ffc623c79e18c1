"""Exception hierarchy shared by the simulator modules."""


class ContactSimError(Exception):
    """Base class for every error raised by this package"""


class InvalidParameterError(ContactSimError, ValueError):
    """A numeric parameter is outside its admissible range"""


class OddDegreeSumError(InvalidParameterError):
    """Half-edges cannot be perfectly matched"""


class GraphError(ContactSimError):
    """Adjacency is not symmetric or not simple"""


class WindowEmptyError(InvalidParameterError):
    """No integer subset size lies in the requested expansion window"""


class InconsistentStateError(ContactSimError):
    """Cached neighbour counts or rates disagree with a full recount"""


class AbsorbedError(ContactSimError):
    """No event can happen: total rate is zero"""


class MalformedMarksError(ContactSimError, ValueError):
    """A mark stream is unsorted or leaves (0, horizon]"""


class TrajectoryUnavailableError(ContactSimError):
    """The trajectory was thinned and has no per-vertex events"""


class LevelCollisionError(InvalidParameterError):
    """Renewal levels round to the same integer"""


class InsufficientDataError(ContactSimError):
    """Too few sizes or samples for a scaling fit"""


class ConfigError(ContactSimError):
    """Experiment configuration is invalid"""


class AnalysisInputError(ContactSimError):
    """Sweep outputs are missing or corrupt"""
