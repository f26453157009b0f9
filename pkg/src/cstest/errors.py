class CstestError(Exception):
    """Base class for errors raised on bad data, configs or models."""


class DataError(CstestError):
    pass


class SchemaError(DataError):
    pass


class ModelError(CstestError):
    pass


class EmptyPoolError(CstestError):
    pass


class ConfigError(CstestError):
    pass
