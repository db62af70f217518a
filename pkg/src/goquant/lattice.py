"""Discrete value sets and their exact integer arithmetic.

Two topologies are provided. The power-of-two ("pot") lattices are
asymmetric: every nonzero level is ±2^e, there is a dedicated zero state,
and the negative branch holds one more level than the positive branch.
The "linear" topology is a plain symmetric uniform grid used only for
ablation comparisons; it never enters the shift kernel.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, NumericError

POT3_VALUES = (-1.0, -0.5, -0.25, -0.125, 0.0, 0.25, 0.5, 1.0)

POT4_VALUES = (
    -1.0, -0.5, -0.25, -0.125, -0.0625, -0.03125, -0.015625, -0.0078125,
    0.0,
    0.015625, 0.03125, 0.0625, 0.125, 0.25, 0.5, 1.0,
)


@dataclass(frozen=True)
class LatticeSpec:
    """An ordered value set with its exact integerized form.

    values are ascending; int_values = values * lambda_factor are exact
    integers. For pot lattices lambda_factor is a power of two, so every
    nonzero int value is ±2^e and multiplication reduces to a shift.
    """

    topology: str
    bits: int
    values: np.ndarray
    lambda_factor: int
    int_values: np.ndarray = field(init=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        ints = np.rint(vals * self.lambda_factor).astype(np.int64)
        if not np.array_equal(ints.astype(np.float64), vals * self.lambda_factor):
            raise DataError("lattice values do not integerize exactly")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "int_values", ints)

    @property
    def n_codes(self):
        return len(self.values)

    def nearest_codes(self, x):
        """Vectorized nearest(): codes of the closest levels to x.

        Inputs are clamped to the lattice range first. The bracketing index
        comes from searchsorted; the winner is decided by actual distance so
        that non-dyadic level grids (the linear lattices) stay exact, with
        distance ties resolving toward the larger-magnitude level.
        """
        x = np.asarray(x, dtype=np.float64)
        if not np.isfinite(x).all():
            raise DataError("nearest() input contains NaN or infinite values")
        x = np.clip(x, self.values[0], self.values[-1])
        hi = np.clip(np.searchsorted(self.values, x, side="left"),
                     0, self.n_codes - 1)
        lo = np.maximum(hi - 1, 0)
        d_lo = np.abs(x - self.values[lo])
        d_hi = np.abs(self.values[hi] - x)
        take_hi = (d_hi < d_lo) | (
            (d_hi == d_lo)
            & (np.abs(self.values[hi]) > np.abs(self.values[lo]))
        )
        return np.where(take_hi, hi, lo).astype(np.uint8)

    def decode_array(self, codes):
        codes = np.asarray(codes)
        if codes.size and (codes.min() < 0 or codes.max() >= self.n_codes):
            raise FormatError(
                f"lattice code out of range for {self.topology}{self.bits}",
                code="bad_code",
            )
        return self.values[codes]

    def decode_ints(self, codes):
        codes = np.asarray(codes)
        if codes.size and (codes.min() < 0 or codes.max() >= self.n_codes):
            raise FormatError(
                f"lattice code out of range for {self.topology}{self.bits}",
                code="bad_code",
            )
        return self.int_values[codes]


def _make_pot(bits):
    if bits == 3:
        vals, lam = POT3_VALUES, 8
    elif bits == 4:
        vals, lam = POT4_VALUES, 128
    else:
        raise DataError(f"pot lattice bits must be 3 or 4, got {bits}")
    return LatticeSpec("pot", bits, np.array(vals), lam)


def _make_linear(bits):
    if bits not in (3, 4):
        raise DataError(f"linear lattice bits must be 3 or 4, got {bits}")
    m = 2 ** (bits - 1) - 1
    vals = np.arange(-m, m + 1, dtype=np.float64) / m
    return LatticeSpec("linear", bits, vals, m)


_REGISTRY = {
    ("pot", 3): _make_pot(3),
    ("pot", 4): _make_pot(4),
    ("linear", 3): _make_linear(3),
    ("linear", 4): _make_linear(4),
}

# Stable identifiers used in the serialized file header.
LATTICE_IDS = {("pot", 3): 0, ("pot", 4): 1, ("linear", 3): 2, ("linear", 4): 3}
_IDS_REVERSE = {v: k for k, v in LATTICE_IDS.items()}


def get_lattice(topology, bits):
    key = (topology, int(bits))
    if key not in _REGISTRY:
        options = sorted(_REGISTRY)
        raise DataError(f"unknown lattice {key}; available: {options}")
    return _REGISTRY[key]


def lattice_id(spec):
    return LATTICE_IDS[(spec.topology, spec.bits)]


def lattice_from_id(ident):
    if ident not in _IDS_REVERSE:
        raise FormatError(f"unknown lattice id {ident}", code="bad_lattice_id")
    return _REGISTRY[_IDS_REVERSE[ident]]


def nearest(spec, x):
    """Code of the lattice level closest to scalar x (ties to larger magnitude)."""
    return int(spec.nearest_codes(np.float64(x)))


def decode(spec, code):
    if not 0 <= code < spec.n_codes:
        raise FormatError(
            f"code {code} out of range for {spec.topology}{spec.bits}",
            code="bad_code",
        )
    return float(spec.values[code])


def encode(spec, value):
    """Inverse of decode for exact lattice levels."""
    matches = np.nonzero(spec.values == value)[0]
    if len(matches) != 1:
        raise DataError(f"{value} is not a lattice level")
    return int(matches[0])


def round_half_away(x):
    """Round to nearest integer with halves away from zero (symmetric)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def shift_mul(spec, a, code, sign_flip=0, acc_bits=32):
    """a * int_values[code] * (-1)^sign_flip using only shift/negate/skip.

    The zero state returns 0 without shifting (zero-skip). Only pot
    lattices are eligible: their nonzero int values are ±2^e.
    """
    if spec.topology != "pot":
        raise DataError("shift_mul requires a pot lattice")
    if not 0 <= code < spec.n_codes:
        raise FormatError(f"code {code} out of range", code="bad_code")
    a = int(a)
    limit = 1 << (acc_bits - 1)
    if not -limit <= a < limit:
        raise NumericError(f"operand {a} exceeds {acc_bits}-bit accumulator")
    iv = int(spec.int_values[code])
    if iv == 0:
        return 0
    exp = abs(iv).bit_length() - 1
    out = a << exp
    if (iv < 0) ^ bool(sign_flip):
        out = -out
    if not -limit <= out < limit:
        raise NumericError(
            f"shift_mul result {out} exceeds {acc_bits}-bit accumulator"
        )
    return out
