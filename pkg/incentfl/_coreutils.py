"""
Core utilities that are loaded into the root namespace or used internally.
"""

import types
import logging


class IncentFLLogger(logging.getLoggerClass()):
    """A custom logger for which we can detect changes in its level."""

    def setLevel(self, level):  # noqa: N802
        super().setLevel(level)
        for cb in logger_set_level_callbacks:
            cb(self.level)  # use arg that is always an int


logger_set_level_callbacks = []
_original_logger_cls = logging.getLoggerClass()
logging.setLoggerClass(IncentFLLogger)
logger = logging.getLogger("incentfl")
logging.setLoggerClass(_original_logger_cls)
assert isinstance(logger, IncentFLLogger)
logger.setLevel(logging.WARNING)


# ===== Errors


class IncentFLError(Exception):
    """Base class for errors raised by incentfl."""


class ConfigError(IncentFLError, ValueError):
    """A malformed configuration. The message names the offending key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DegenerateError(IncentFLError, ArithmeticError):
    """A quantity cannot be evaluated because the model is saturated there."""


# ===== Enums

# Enums are classes whose fields are plain strings. That keeps configs
# and JSON output readable, and IDE's still autocomplete the fields.


class EnumType(type):
    """Metaclass for enums."""

    def __new__(cls, name, bases, dct):
        member_map = {}
        for key, val in dct.items():
            if not key.startswith("_"):
                val = key if val is None else val
                if not isinstance(val, str):
                    raise TypeError("Enum fields must be str.")
                member_map[key] = val
        dct.update(member_map)
        klass = super().__new__(cls, name, bases, dct)
        klass.__fields__ = tuple(member_map)
        klass.__members__ = types.MappingProxyType(member_map)
        for name in ["__dir__", "__iter__", "__getitem__", "__setattr__", "__repr__"]:
            setattr(klass, name, types.MethodType(getattr(cls, name), klass))
        return klass

    def __dir__(cls):
        return cls.__fields__

    def __iter__(cls):
        # Support list(enum) and ``x in enum``
        return iter([getattr(cls, key) for key in cls.__fields__])

    def __getitem__(cls, key):
        return cls.__dict__[key]

    def __repr__(cls):
        if cls is BaseEnum:
            return "<incentfl.BaseEnum>"
        options = ", ".join(f"'{cls[key]}'" for key in cls.__fields__)
        return f"<incentfl.{cls.__name__} enum with options: {options}>"

    def __setattr__(cls, name, value):
        if name.startswith("_"):
            super().__setattr__(name, value)
        else:
            raise RuntimeError("Cannot set values on an enum.")


class BaseEnum(metaclass=EnumType):
    """Base class for enums. Fields are simply strings."""

    def __init__(self):
        raise RuntimeError("Cannot instantiate an enum.")


_enum_cache = {}  # str -> str


def str_to_enum_value(enum, s):
    """Resolve a user-supplied string (e.g. from a config file) to a value of
    the given enum. Matching is case-insensitive and ignores ``-``/``_``.
    Results are cached.
    """
    cache_key = f"{enum.__name__}.{s}"
    value = _enum_cache.get(cache_key, None)
    if value is None:
        wanted = str(s).strip().lower().replace("-", "_")
        for val in enum:
            if val.lower().replace("-", "_") == wanted:
                value = val
                break
        else:
            options = ", ".join(repr(v) for v in enum)
            raise ValueError(f"Invalid value for {enum.__name__}: {s!r} (use {options})")
        _enum_cache[cache_key] = value
    return value
