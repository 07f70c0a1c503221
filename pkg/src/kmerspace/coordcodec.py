"""Base-b positional encoding of genomic coordinates.

Digit vectors are most-significant first and zero-padded to
N_b = floor(log_b(L)) + 1 digits, computed in exact integer arithmetic
(floating-point logs misbehave near exact powers).
"""

import warnings

import numpy as np


def num_digits(length, base):
    """Digits needed for coordinates in [0, length): floor(log_b L) + 1."""
    if base < 2:
        raise ValueError(f"base must be >= 2, got {base}")
    if length < 1:
        raise ValueError(f"coordinate-space size must be >= 1, got {length}")
    n = 1
    p = base
    while p <= length:
        p *= base
        n += 1
    return n


def encode_coordinate(c, base, length):
    """Positional digits of c, MSB first, padded to num_digits(length, base)."""
    if c < 0:
        raise ValueError(f"coordinate must be nonnegative, got {c}")
    nb = num_digits(length, base)
    if c >= base ** nb:
        raise ValueError(f"coordinate {c} not representable in {nb} base-{base} digits")
    if c > length - 1:
        warnings.warn(f"coordinate {c} exceeds L-1 = {length - 1}")
    digits = np.zeros(nb, dtype=np.int64)
    v = int(c)
    for i in range(nb - 1, -1, -1):
        v, digits[i] = divmod(v, base)
    return digits


def decode_digits(digits, base):
    """Exact inverse of encode_coordinate."""
    value = 0
    for d in np.asarray(digits).tolist():
        if d < 0 or d >= base:
            raise ValueError(f"digit {d} outside [0, {base})")
        value = value * base + d
    return value


def one_hot_digits(digits, base):
    """(N_b, base) one-hot matrix: row n is the indicator of digit t_n."""
    digits = np.asarray(digits)
    out = np.zeros((digits.shape[0], base), dtype=np.float32)
    out[np.arange(digits.shape[0]), digits] = 1.0
    return out


def encode_coords_batch(coords, base, length):
    """(N,) int coords -> (N, N_b) digit matrix, MSB first."""
    coords = np.asarray(coords, dtype=np.int64)
    if (coords < 0).any():
        raise ValueError("coordinates must be nonnegative")
    nb = num_digits(length, base)
    out = np.zeros((coords.shape[0], nb), dtype=np.int64)
    v = coords.copy()
    for i in range(nb - 1, -1, -1):
        out[:, i] = v % base
        v //= base
    if (v != 0).any():
        raise ValueError("coordinate overflow for digit width")
    return out


def decode_digits_batch(digits, base):
    """(N, N_b) digit matrix -> (N,) int64 coordinates."""
    digits = np.asarray(digits, dtype=np.int64)
    out = np.zeros(digits.shape[0], dtype=np.int64)
    for i in range(digits.shape[1]):
        out = out * base + digits[:, i]
    return out
