# gargoyle/errors.py
# One hierarchy for everything the pipeline raises on purpose.
# GargoyleError is not a ValueError so pydantic validators let it through untouched.


class GargoyleError(Exception):
    pass


class SchemaError(GargoyleError):
    """A document (topology, policy pack, catalog, scenario, flow log) is malformed."""


class ConfigError(GargoyleError):
    pass


class TopologyError(GargoyleError):
    pass


class NetsimError(GargoyleError):
    pass


class UnknownDevice(NetsimError):
    pass


class PortOutOfRange(NetsimError):
    pass


class MediumMismatch(NetsimError):
    pass


class NotAttached(NetsimError):
    pass


class Unreachable(NetsimError):
    pass


class UnknownTarget(NetsimError):
    pass


class UnknownObject(GargoyleError):
    pass


class PolicyError(GargoyleError):
    pass


class UnknownVocabularyReference(PolicyError):
    pass


class DuplicatePriority(PolicyError):
    pass


class SessionOnDeny(GargoyleError):
    pass
