"""
Numeric Formats - Customized Floating Point and Fixed Point
Bit-exact emulation of narrow formats and the arithmetic performed in them.

Values live in a float64 substrate. Every operation forms the exact result
there and quantizes it once into the target format, so the quantizer is the
only source of error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

import numpy as np

from config.settings import ENUMERATE_MAX_BITS
from utils.errors import DomainError, FormatError

# ============================================================
# 1. FORMATS
# ============================================================

FLOAT32_MAX = float(np.finfo(np.float32).max)
FLOAT32_TINY = math.ldexp(1.0, -149)
_FLOAT64_MAX = float(np.finfo(np.float64).max)
_SPLITTER = 134217729.0  # 2**27 + 1
MAX_EXPONENT_BITS = 16


class RoundingMode(str, Enum):
    TRUNCATE = "truncate"
    NEAREST_EVEN = "nearest_even"


def default_bias(exponent_bits):
    """Bias used when a float format leaves it unspecified: 2^(N_e-1) - 1"""
    return 2 ** (exponent_bits - 1) - 1


@dataclass(frozen=True)
class FloatFormat:
    """
    Sign | exponent | mantissa, implicit leading 1, no subnormals,
    no infinity or NaN encodings. The all-zero exponent and mantissa
    code is zero.
    """

    mantissa_bits: int
    exponent_bits: int
    bias: int | None = None
    rounding: RoundingMode = RoundingMode.TRUNCATE

    def __post_init__(self):
        if self.bias is None:
            object.__setattr__(self, 'bias', default_bias(self.exponent_bits) if self.exponent_bits >= 1 else 0)
        object.__setattr__(self, 'rounding', RoundingMode(self.rounding))
        if not 0 <= self.mantissa_bits <= 52:
            raise DomainError(f"mantissa bits must be in [0, 52], got {self.mantissa_bits}")
        if not 1 <= self.exponent_bits <= MAX_EXPONENT_BITS:
            raise DomainError(f"exponent bits must be in [1, {MAX_EXPONENT_BITS}], got {self.exponent_bits}")
        if self.lowest_exponent > self.highest_exponent:
            raise DomainError(
                f"bias {self.bias} puts exponents [{self.min_exponent}, {self.max_exponent}] "
                f"outside the emulation substrate"
            )

    kind = 'float'

    @property
    def total_bits(self):
        return self.mantissa_bits + self.exponent_bits + 1

    @property
    def precision_bits(self):
        return self.mantissa_bits

    @property
    def min_exponent(self):
        return -self.bias

    @property
    def max_exponent(self):
        return 2 ** self.exponent_bits - 1 - self.bias

    # Exponents the float64 substrate can hold with every mantissa bit intact.
    # Wide exponent fields (the format allows up to 16 bits) are clipped to these.
    @property
    def lowest_exponent(self):
        return max(self.min_exponent, -1074 + self.mantissa_bits)

    @property
    def highest_exponent(self):
        return min(self.max_exponent, 1023)

    @property
    def literal(self):
        return format_literal(self)

    def __str__(self):
        return self.literal


@dataclass(frozen=True)
class FixedFormat:
    """Sign-magnitude: an explicit sign bit plus I integer and F fraction bits."""

    integer_bits: int
    fraction_bits: int
    rounding: RoundingMode = RoundingMode.TRUNCATE

    def __post_init__(self):
        object.__setattr__(self, 'rounding', RoundingMode(self.rounding))
        if self.integer_bits < 0 or self.fraction_bits < 0:
            raise DomainError("fixed-point bit counts must be nonnegative")
        if self.integer_bits + self.fraction_bits < 1:
            raise DomainError("fixed-point format needs at least one magnitude bit")
        if self.integer_bits + self.fraction_bits > 52:
            raise DomainError("fixed-point magnitude wider than the emulation substrate (52 bits)")

    kind = 'fixed'

    @property
    def total_bits(self):
        return self.integer_bits + self.fraction_bits + 1

    @property
    def precision_bits(self):
        return self.fraction_bits

    @property
    def literal(self):
        return format_literal(self)

    def __str__(self):
        return self.literal


@dataclass(frozen=True)
class Baseline:
    """IEEE-754 single precision pass-through."""

    kind = 'baseline'
    total_bits = 32
    mantissa_bits = 23
    exponent_bits = 8
    bias = 127

    @property
    def literal(self):
        return 'baseline'

    def __str__(self):
        return self.literal


BASELINE = Baseline()

NumericFormat = Union[FloatFormat, FixedFormat, Baseline]


@dataclass(frozen=True)
class BitPattern:
    width: int
    bits: int

    def __post_init__(self):
        if self.width < 1 or not 0 <= self.bits < 2 ** self.width:
            raise DomainError(f"bit pattern {self.bits} does not fit in {self.width} bits")

    def fields(self, fmt):
        """Split into (sign, high field, low field) per the format layout."""
        if isinstance(fmt, FloatFormat):
            low_width, high_width = fmt.mantissa_bits, fmt.exponent_bits
        elif isinstance(fmt, FixedFormat):
            low_width, high_width = fmt.fraction_bits, fmt.integer_bits
        else:
            low_width, high_width = 23, 8
        low = self.bits & ((1 << low_width) - 1)
        high = (self.bits >> low_width) & ((1 << high_width) - 1)
        sign = self.bits >> (low_width + high_width)
        return sign, high, low

    def __str__(self):
        return format(self.bits, f'0{self.width}b')


# ============================================================
# 2. FORMAT LITERALS
# ============================================================

_FLOAT_LITERAL = re.compile(r'^float:m(\d+)e(\d+)(?:b(-?\d+))?(?::(rne|trunc))?$')
_FIXED_LITERAL = re.compile(r'^fixed:i(\d+)f(\d+)(?::(rne|trunc))?$')


def _rounding_from_suffix(suffix):
    return RoundingMode.NEAREST_EVEN if suffix == 'rne' else RoundingMode.TRUNCATE


def parse_format(text):
    """Parse `float:m<M>e<E>[b<B>]`, `fixed:i<I>f<F>` or `baseline` (optional `:rne` suffix)."""
    literal = str(text).strip().lower()
    if literal == 'baseline':
        return BASELINE
    match = _FLOAT_LITERAL.match(literal)
    if match:
        mantissa, exponent, bias, suffix = match.groups()
        return FloatFormat(
            int(mantissa), int(exponent),
            int(bias) if bias is not None else None,
            _rounding_from_suffix(suffix),
        )
    match = _FIXED_LITERAL.match(literal)
    if match:
        integer, fraction, suffix = match.groups()
        return FixedFormat(int(integer), int(fraction), _rounding_from_suffix(suffix))
    raise FormatError(f"unrecognized format literal '{text}'")


def format_literal(fmt):
    if isinstance(fmt, Baseline):
        return 'baseline'
    suffix = ':rne' if fmt.rounding is RoundingMode.NEAREST_EVEN else ''
    if isinstance(fmt, FloatFormat):
        bias = '' if fmt.bias == default_bias(fmt.exponent_bits) else f'b{fmt.bias}'
        return f'float:m{fmt.mantissa_bits}e{fmt.exponent_bits}{bias}{suffix}'
    if isinstance(fmt, FixedFormat):
        return f'fixed:i{fmt.integer_bits}f{fmt.fraction_bits}{suffix}'
    raise DomainError(f"not a numeric format: {fmt!r}")


def adjust_precision(fmt, delta):
    """Same-kind format with `delta` more precision bits (mantissa or fraction), or None."""
    try:
        if isinstance(fmt, FloatFormat):
            return replace(fmt, mantissa_bits=fmt.mantissa_bits + delta)
        if isinstance(fmt, FixedFormat):
            return replace(fmt, fraction_bits=fmt.fraction_bits + delta)
    except DomainError:
        return None
    return None


# ============================================================
# 3. RANGE
# ============================================================

def max_value(fmt):
    if isinstance(fmt, FloatFormat):
        return math.ldexp(2.0 - math.ldexp(1.0, -fmt.mantissa_bits), fmt.highest_exponent)
    if isinstance(fmt, FixedFormat):
        return math.ldexp(1.0, fmt.integer_bits) - math.ldexp(1.0, -fmt.fraction_bits)
    if isinstance(fmt, Baseline):
        return FLOAT32_MAX
    raise DomainError(f"not a numeric format: {fmt!r}")


def min_positive(fmt):
    if isinstance(fmt, FloatFormat):
        if fmt.lowest_exponent > fmt.min_exponent:
            return math.ldexp(1.0, fmt.lowest_exponent)
        # exponent field 0 with mantissa 0 is the zero code
        if fmt.mantissa_bits == 0:
            return math.ldexp(1.0, fmt.min_exponent + 1)
        return math.ldexp(1.0 + math.ldexp(1.0, -fmt.mantissa_bits), fmt.min_exponent)
    if isinstance(fmt, FixedFormat):
        return math.ldexp(1.0, -fmt.fraction_bits)
    if isinstance(fmt, Baseline):
        return FLOAT32_TINY
    raise DomainError(f"not a numeric format: {fmt!r}")


def ulp(x, fmt):
    """Gap between adjacent representable values at magnitude |x|."""
    x = float(x)
    if not math.isfinite(x):
        raise DomainError("ulp: non-finite input")
    if isinstance(fmt, FixedFormat):
        return math.ldexp(1.0, -fmt.fraction_bits)
    if isinstance(fmt, Baseline):
        fmt = FloatFormat(23, 8, 127)
    if not isinstance(fmt, FloatFormat):
        raise DomainError(f"not a numeric format: {fmt!r}")
    if abs(x) > max_value(fmt):
        raise DomainError(f"ulp: |{x}| exceeds the largest value of {fmt}")
    snapped = quantize(abs(x), fmt)
    if snapped == 0.0:
        return min_positive(fmt)
    exponent = math.frexp(snapped)[1] - 1
    return math.ldexp(1.0, exponent - fmt.mantissa_bits)


# ============================================================
# 4. QUANTIZATION
# ============================================================

def _as_substrate(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _restore(out, scalar):
    return float(out) if scalar else out


def _saturate_and_flush(arr, mag, out, fmt):
    top = max_value(fmt)
    low = min_positive(fmt)
    out = np.minimum(out, top)
    if fmt.rounding is RoundingMode.TRUNCATE:
        out = np.where(out < low, 0.0, out)
    else:
        out = np.where(out < low, np.where(mag > low / 2, low, 0.0), out)
    # +0.0 folds negative zero into zero
    return np.copysign(out, arr) + 0.0


def _quantize_float(arr, fmt):
    mag = np.abs(arr)
    frac, exp = np.frexp(mag)
    shift = fmt.mantissa_bits + 1
    scaled = np.ldexp(frac, shift)
    kept = np.floor(scaled) if fmt.rounding is RoundingMode.TRUNCATE else np.rint(scaled)
    out = np.ldexp(kept, exp - shift)
    return _saturate_and_flush(arr, mag, out, fmt)


def _quantize_fixed(arr, fmt):
    mag = np.abs(arr)
    scaled = np.ldexp(mag, fmt.fraction_bits)
    kept = np.floor(scaled) if fmt.rounding is RoundingMode.TRUNCATE else np.rint(scaled)
    out = np.ldexp(kept, -fmt.fraction_bits)
    return _saturate_and_flush(arr, mag, out, fmt)


def _quantize_baseline(arr):
    return np.clip(arr, -FLOAT32_MAX, FLOAT32_MAX).astype(np.float32).astype(np.float64) + 0.0


def _quantize_array(arr, fmt):
    if not np.all(np.isfinite(arr)):
        raise DomainError("quantize: non-finite input")
    if isinstance(fmt, Baseline):
        return _quantize_baseline(arr)
    if isinstance(fmt, FloatFormat):
        return _quantize_float(arr, fmt)
    if isinstance(fmt, FixedFormat):
        return _quantize_fixed(arr, fmt)
    raise DomainError(f"not a numeric format: {fmt!r}")


def quantize(x, fmt):
    """
    Nearest representable value of `fmt` toward zero (or nearest-even when the
    format asks for it). Saturates at +-max_value, flushes below min_positive.
    Accepts a scalar or an array; returns the same kind.
    """
    arr, scalar = _as_substrate(x)
    return _restore(_quantize_array(arr, fmt), scalar)


# ============================================================
# 5. ARITHMETIC
# ============================================================

def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_product(a, b):
    p = a * b
    a_hi, a_lo = _split(a)
    b_hi, b_lo = _split(b)
    err = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, err


def _round_exact(s, err, fmt):
    """Quantize the exact value s + err, where err is the substrate's rounding residue."""
    with np.errstate(invalid='ignore', over='ignore'):
        err = np.where(np.isfinite(err), err, 0.0)
        if not isinstance(fmt, Baseline) and fmt.rounding is RoundingMode.TRUNCATE:
            # exact magnitude sits just below |s|: step one substrate ulp toward zero
            s = np.where(err * s < 0, np.nextafter(s, 0.0), s)
        s = np.where(np.isinf(s), np.copysign(_FLOAT64_MAX, s), s)
    return _quantize_array(s, fmt)


def _binary(a, b):
    a_arr, a_scalar = _as_substrate(a)
    b_arr, b_scalar = _as_substrate(b)
    return a_arr, b_arr, a_scalar and b_scalar


def qadd(a, b, fmt):
    a_arr, b_arr, scalar = _binary(a, b)
    with np.errstate(over='ignore', invalid='ignore'):
        s, err = _two_sum(a_arr, b_arr)
    return _restore(_round_exact(s, err, fmt), scalar)


def qmul(a, b, fmt):
    a_arr, b_arr, scalar = _binary(a, b)
    with np.errstate(over='ignore', invalid='ignore'):
        p, err = _two_product(a_arr, b_arr)
    return _restore(_round_exact(p, err, fmt), scalar)


def qdiv(a, b, fmt):
    a_arr, b_arr, scalar = _binary(a, b)
    if np.any(b_arr == 0):
        raise DomainError("qdiv: division by zero")
    with np.errstate(over='ignore', invalid='ignore'):
        q = a_arr / b_arr
        p, p_err = _two_product(q, b_arr)
        # sign of the exact remainder tells which side of q the true quotient lies
        err = ((a_arr - p) - p_err) / b_arr
    return _restore(_round_exact(q, err, fmt), scalar)


def mac(acc, a, b, fmt):
    """acc + a*b with a quantization after the product and after the sum."""
    return qadd(acc, qmul(a, b, fmt), fmt)


# ============================================================
# 6. ENCODING
# ============================================================

def encode(x, fmt):
    x = float(x)
    if not math.isfinite(x):
        raise DomainError("encode: non-finite input")
    if quantize(x, fmt) != x:
        raise DomainError(f"encode: {x!r} is not representable in {format_literal(fmt)}")
    width = fmt.total_bits
    x += 0.0
    if isinstance(fmt, Baseline):
        return BitPattern(width, int(np.array(x, dtype=np.float32).view(np.uint32)))
    if x == 0.0:
        return BitPattern(width, 0)
    sign = 1 if x < 0 else 0
    mag = abs(x)
    if isinstance(fmt, FloatFormat):
        frac, exp = math.frexp(mag)
        field = exp - 1 + fmt.bias
        mantissa = int(math.ldexp(frac * 2.0 - 1.0, fmt.mantissa_bits))
        bits = (sign << (fmt.exponent_bits + fmt.mantissa_bits)) | (field << fmt.mantissa_bits) | mantissa
    else:
        magnitude = int(math.ldexp(mag, fmt.fraction_bits))
        bits = (sign << (fmt.integer_bits + fmt.fraction_bits)) | magnitude
    return BitPattern(width, bits)


def decode(pattern, fmt):
    if pattern.width != fmt.total_bits:
        raise DomainError(f"decode: {pattern.width}-bit pattern for {fmt.total_bits}-bit format {format_literal(fmt)}")
    if isinstance(fmt, Baseline):
        value = float(np.array(pattern.bits, dtype=np.uint32).view(np.float32))
        if not math.isfinite(value):
            raise DomainError("decode: IEEE special encodings are not supported")
        return value + 0.0
    sign, high, low = pattern.fields(fmt)
    if isinstance(fmt, FloatFormat):
        if high == 0 and low == 0:
            return 0.0
        exponent = high - fmt.bias
        if not fmt.lowest_exponent <= exponent <= fmt.highest_exponent:
            raise DomainError(f"decode: exponent {exponent} lies outside the emulation substrate")
        value = math.ldexp((1 << fmt.mantissa_bits) + low, exponent - fmt.mantissa_bits)
    else:
        value = math.ldexp((high << fmt.fraction_bits) | low, -fmt.fraction_bits)
    return (-value if sign else value) + 0.0


def enumerate_values(fmt):
    """Every distinct representable value, ascending."""
    width = fmt.total_bits
    if width > ENUMERATE_MAX_BITS:
        raise DomainError(f"enumerate_values: {width}-bit format exceeds {ENUMERATE_MAX_BITS}-bit limit")
    values = set()
    for bits in range(2 ** width):
        try:
            values.add(decode(BitPattern(width, bits), fmt))
        except DomainError:
            # exponent codes beyond the substrate
            continue
    return sorted(values)
