"""Exact scaled-integer vector arithmetic.

Every gradient, mask, and model in the protocol is an `FpVector`: a vector of
signed 64-bit integer raws sharing one power-of-two scale, value = raw * 2^-t.
All protocol-path arithmetic is integer-only and deterministic, so the audit
identities hold as bit-for-bit equalities rather than float tolerances.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .backend import (
    INT64_MAX,
    KernelOverflow,
    add_checked_i64,
    dot_i64,
    hadamard_i64,
    scale_checked_i64,
)

DEFAULT_SCALE = 20

_HALF_EXACT = float(1 << 52)  # below this, y + 0.5 is exact in float64


class FixedPointOverflowError(OverflowError):
    """A value cannot be represented in the signed 64-bit raw range."""


class DimensionMismatchError(ValueError):
    """Two vectors that must share a dimension do not."""


class FpScalar(NamedTuple):
    """One fixed-point number: value = raw * 2^-scale."""

    raw: int
    scale: int

    def to_float(self) -> float:
        return self.raw / (1 << self.scale)


def quantize(x: float, scale: int = DEFAULT_SCALE) -> FpScalar:
    """Round a real number onto the 2^-scale lattice, half away from zero."""
    raw = _quantize_array(np.asarray([x], dtype=np.float64), scale)
    return FpScalar(int(raw[0]), scale)


def _quantize_array(x: np.ndarray, scale: int) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        k = int(np.argmin(np.isfinite(x)))
        raise FixedPointOverflowError(
            f"non-finite value {x[k]!r} at index {k} cannot be quantized"
        )
    y = np.abs(x) * float(1 << scale)  # exact: multiplying by a power of two
    if np.any(y >= float(1 << 63)):
        k = int(np.argmax(y >= float(1 << 63)))
        raise FixedPointOverflowError(
            f"|{x[k]!r}| * 2^{scale} exceeds the signed 64-bit raw range"
        )
    # For y < 2^52 the +0.5 trick is exact half-away-from-zero rounding; at or
    # above 2^52 every float64 is already an integer, so no rounding happens.
    rounded = np.where(y < _HALF_EXACT, np.floor(y + 0.5), y)
    raw = rounded.astype(np.int64)
    return np.where(np.signbit(x), -raw, raw).astype(np.int64)


class FpVector:
    """Immutable fixed-point vector: int64 raws plus one shared scale."""

    __slots__ = ("raw", "scale")

    def __init__(self, raw: np.ndarray, scale: int):
        raw = np.ascontiguousarray(raw, dtype=np.int64)
        raw.setflags(write=False)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "scale", int(scale))

    def __setattr__(self, name, value):
        raise AttributeError("FpVector is immutable")

    @property
    def dim(self) -> int:
        return int(self.raw.shape[0])

    @classmethod
    def zeros(cls, dim: int, scale: int = DEFAULT_SCALE) -> "FpVector":
        return cls(np.zeros(dim, dtype=np.int64), scale)

    @classmethod
    def from_floats(cls, xs, scale: int = DEFAULT_SCALE) -> "FpVector":
        xs = np.asarray(xs, dtype=np.float64)
        return cls(_quantize_array(xs, scale), scale)

    def to_floats(self) -> np.ndarray:
        return self.raw.astype(np.float64) / float(1 << self.scale)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FpVector)
            and self.scale == other.scale
            and self.raw.shape == other.raw.shape
            and bool(np.array_equal(self.raw, other.raw))
        )

    def __hash__(self):
        return hash((self.scale, self.raw.tobytes()))

    def __repr__(self) -> str:
        return f"FpVector(dim={self.dim}, scale={self.scale})"

    def _check_compatible(self, other: "FpVector") -> None:
        if self.scale != other.scale:
            raise ValueError(
                f"mixed scales: {self.scale} vs {other.scale}"
            )
        if self.raw.shape != other.raw.shape:
            raise DimensionMismatchError(
                f"dimension mismatch: {self.dim} vs {other.dim}"
            )

    def __add__(self, other: "FpVector") -> "FpVector":
        self._check_compatible(other)
        try:
            return FpVector(add_checked_i64(self.raw, other.raw), self.scale)
        except KernelOverflow as e:
            raise FixedPointOverflowError(
                f"add overflows int64 at index {e.index}: {e.x} + {e.y}"
            ) from None

    def __sub__(self, other: "FpVector") -> "FpVector":
        return self + (-other)

    def __neg__(self) -> "FpVector":
        # raws never reach INT64_MIN (quantize and masks bound them), so
        # negation cannot overflow; assert rather than silently wrap.
        if self.raw.size and int(self.raw.min()) == -(1 << 63):
            raise FixedPointOverflowError("cannot negate INT64_MIN raw")
        return FpVector(-self.raw, self.scale)

    def scalar_mul(self, c: int) -> "FpVector":
        """Multiply every raw by a plain integer c (scale unchanged)."""
        try:
            return FpVector(scale_checked_i64(self.raw, int(c)), self.scale)
        except KernelOverflow as e:
            raise FixedPointOverflowError(
                f"scalar multiply overflows int64 at index {e.index}: "
                f"{e.x} * {c}"
            ) from None

    def max_abs_raw(self) -> int:
        if self.raw.size == 0:
            return 0
        return max(int(self.raw.max()), -int(self.raw.min()))

    # -- canonical byte encoding (the signing preimage format) --------------

    def encode(self) -> bytes:
        """dim (u64 LE) + scale (u8) + raws as little-endian two's-complement."""
        return struct.pack("<QB", self.dim, self.scale) + self.raw.astype(
            "<i8"
        ).tobytes()

    @classmethod
    def decode(cls, data: bytes) -> "FpVector":
        if len(data) < 9:
            raise ValueError(f"FpVector encoding too short: {len(data)} bytes")
        dim, scale = struct.unpack_from("<QB", data, 0)
        expect = 9 + 8 * dim
        if len(data) != expect:
            raise ValueError(
                f"FpVector encoding length {len(data)} != expected {expect}"
            )
        raw = np.frombuffer(data, dtype="<i8", count=dim, offset=9)
        return cls(raw.astype(np.int64), scale)

    def encoded_size(self) -> int:
        return 9 + 8 * self.dim


def dot(a: FpVector, b: FpVector) -> int:
    """Exact raw-level inner product: sum of raw_a[k]*raw_b[k] as a big int."""
    a._check_compatible(b)
    return dot_i64(a.raw, b.raw)


def hadamard(a: FpVector, mask) -> FpVector:
    """Entrywise product with a plain-integer mask vector; scale unchanged."""
    m = np.ascontiguousarray(mask, dtype=np.int64)
    if m.shape != a.raw.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {a.dim} vs {m.shape[0]}"
        )
    try:
        return FpVector(hadamard_i64(a.raw, m), a.scale)
    except KernelOverflow as e:
        raise FixedPointOverflowError(
            f"mask product overflows int64 at index {e.index}: {e.x} * {e.y} "
            f"(mask range too large for the gradient scale)"
        ) from None


def floor_div(v: FpVector, c: int) -> FpVector:
    """Entrywise floor division of raws toward -infinity by a positive count.

    Floor rounding gives the separation identity
    floor((c*A + B) / c) == A + floor(B / c), which is what makes the
    aggregation audit an exact integer equality.
    """
    c = int(c)
    if c < 1:
        raise ValueError(f"divisor must be a positive count, got {c}")
    return FpVector(v.raw // np.int64(c), v.scale)


def sign_indicator(x: int) -> int:
    """0 if x <= 0 else 1."""
    return 1 if x > 0 else 0


def scale_by_dyadic(v: FpVector, num: int, exp: int) -> FpVector:
    """floor(eta * v) entrywise for a dyadic rate eta = num / 2^exp.

    Arithmetic right shift floors toward -infinity, matching floor_div, so
    the model-update step and the audit replay round identically.
    """
    num = int(num)
    exp = int(exp)
    if exp < 0:
        raise ValueError(f"dyadic exponent must be >= 0, got {exp}")
    scaled = scale_checked_i64(v.raw, num)
    return FpVector(scaled >> np.int64(exp), v.scale)
