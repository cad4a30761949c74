"""Shared value vocabulary: kinds, quality flags and the update record.

Every monitored or controlled quantity in the stack is a typed, timestamped,
quality-flagged value. Timestamps are int milliseconds UTC throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

Scalar = Union[float, int, bool, str]
Value = Union[Scalar, list]

MAX_ARRAY_LEN = 65536


class SlowControlError(Exception):
    """Base class for errors raised by this package."""


class KindMismatchError(SlowControlError):
    pass


class Kind(Enum):
    FLOAT = "float"
    INT = "int"
    BOOL = "bool"
    STRING = "string"
    FLOAT_ARRAY = "float[]"
    INT_ARRAY = "int[]"
    BOOL_ARRAY = "bool[]"
    STRING_ARRAY = "string[]"

    @property
    def is_array(self) -> bool:
        return self.value.endswith("[]")

    @property
    def element(self) -> "Kind":
        """Element kind for arrays; identity for scalars."""
        return Kind(self.value[:-2]) if self.is_array else self

    @property
    def is_numeric(self) -> bool:
        return self.element in (Kind.FLOAT, Kind.INT)


class Quality(Enum):
    VALID = "valid"
    INVALID = "invalid"
    STALE = "stale"


_SCALAR_CHECKS = {
    Kind.FLOAT: lambda v: isinstance(v, (float, int)) and not isinstance(v, bool),
    Kind.INT: lambda v: isinstance(v, int) and not isinstance(v, bool),
    Kind.BOOL: lambda v: isinstance(v, bool),
    Kind.STRING: lambda v: isinstance(v, str),
}


def coerce_value(kind: Kind, value: Value) -> Value:
    """Validate `value` against `kind` and normalize it (ints become floats
    for float kinds, array elements likewise). Raises KindMismatchError."""
    if kind.is_array:
        if not isinstance(value, list):
            raise KindMismatchError(f"expected {kind.value}, got {type(value).__name__}")
        if len(value) > MAX_ARRAY_LEN:
            raise KindMismatchError(f"array length {len(value)} exceeds {MAX_ARRAY_LEN}")
        elem = kind.element
        return [coerce_value(elem, v) for v in value]
    check = _SCALAR_CHECKS[kind]
    if not check(value):
        raise KindMismatchError(f"expected {kind.value}, got {type(value).__name__} ({value!r})")
    if kind is Kind.FLOAT:
        value = float(value)
        if not math.isfinite(value):
            raise KindMismatchError(f"non-finite float {value!r}")
    return value


@dataclass(frozen=True, slots=True)
class Update:
    """One published value: the unit flowing from devices to the supervisor."""

    path: str
    kind: Kind
    value: Value
    timestamp: int  # ms UTC
    quality: Quality = Quality.VALID
