"""Privacy amplification: 2-universal Toeplitz hashing and one-time pads.

The hash multiplies the input bit vector by a Toeplitz matrix specified by a
single diagonal seed of n_in + l_out - 1 bits.  The product is evaluated as
a GF(2) convolution via FFT, so the matrix is never materialized and the
whole input is hashed in one pass, however long it is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

__all__ = ["HashSeed", "toeplitz_hash", "sample_seed", "one_time_pad"]


@dataclass(frozen=True)
class HashSeed:
    """Diagonal specification of a Toeplitz matrix, n_in + l_out - 1 bits."""

    bits: np.ndarray
    n_in: int
    l_out: int

    def __post_init__(self) -> None:
        if self.bits.size != self.n_in + self.l_out - 1:
            raise ValueError(
                f"seed length must be {self.n_in + self.l_out - 1}, "
                f"got {self.bits.size}"
            )


def toeplitz_hash(seed: HashSeed, bits: np.ndarray, l_out: int) -> np.ndarray:
    """Toeplitz-matrix product over GF(2), evaluated as a convolution.

    output_i = XOR_j T[i, j] x_j with T[i, j] = seed[i - j + n_in - 1].
    """
    x = np.asarray(bits).astype(np.float64)
    if l_out > x.size:
        raise ValueError("l_out cannot exceed the input length")
    if seed.n_in != x.size or seed.l_out != l_out:
        raise ValueError("seed sized for different input/output lengths")
    full = fftconvolve(seed.bits.astype(np.float64), x)
    out = np.rint(full[x.size - 1: x.size - 1 + l_out]).astype(np.int64)
    return (out % 2).astype(np.uint8)


def sample_seed(rng: np.random.Generator, n_in: int, l_out: int) -> HashSeed:
    """Uniformly random Toeplitz seed for the given sizes."""
    if n_in < 1 or l_out < 1:
        raise ValueError("sizes must be >= 1")
    return HashSeed(
        bits=rng.integers(0, 2, n_in + l_out - 1, dtype=np.uint8),
        n_in=n_in,
        l_out=l_out,
    )


def one_time_pad(key: np.ndarray, message: np.ndarray) -> np.ndarray:
    """Bitwise XOR; self-inverse."""
    key = np.asarray(key)
    message = np.asarray(message)
    if key.size != message.size:
        raise ValueError("key and message lengths must match")
    return (key.astype(np.uint8) ^ message.astype(np.uint8))
