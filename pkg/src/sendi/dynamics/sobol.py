"""Gray-code Sobol sequence with Joe-Kuo direction numbers (first six dimensions)."""

from __future__ import annotations

import numpy as np

BITS = 32
# (degree s, polynomial coefficient a, initial direction integers m) for dims 2..6
_JOE_KUO = [
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
]
MAX_DIMS = len(_JOE_KUO) + 1


class SobolConfigurationError(ValueError):
    pass


def _direction_numbers(dims: int) -> np.ndarray:
    v = np.zeros((dims, BITS), dtype=np.uint64)
    v[0] = [1 << (BITS - 1 - k) for k in range(BITS)]
    for d in range(1, dims):
        s, a, m = _JOE_KUO[d - 1]
        vd = [0] * BITS
        for k in range(min(s, BITS)):
            vd[k] = m[k] << (BITS - 1 - k)
        for k in range(s, BITS):
            value = vd[k - s] ^ (vd[k - s] >> s)
            for j in range(1, s):
                if (a >> (s - 1 - j)) & 1:
                    value ^= vd[k - j]
            vd[k] = value
        v[d] = vd
    return v


def sobol_points(dims: int, count: int, skip_first: bool = True) -> np.ndarray:
    """Unit-cube Sobol points; the leading all-zeros point is dropped by default."""
    if not 1 <= dims <= MAX_DIMS:
        raise SobolConfigurationError(f"Sobol supports 1..{MAX_DIMS} dimensions, got {dims}")
    if count < 1:
        raise ValueError("count must be >= 1")
    v = _direction_numbers(dims)
    total = count + (1 if skip_first else 0)
    out = np.empty((total, dims), dtype=np.uint64)
    x = np.zeros(dims, dtype=np.uint64)
    out[0] = x
    for i in range(1, total):
        c = (i & -i).bit_length() - 1  # lowest zero bit of i - 1
        x = x ^ v[:, c]
        out[i] = x
    pts = out.astype(np.float64) / float(1 << BITS)
    return pts[1:] if skip_first else pts


def sobol_sample(dims: int, count: int, bounds, seed: int | None = None) -> np.ndarray:
    """``count`` low-discrepancy points scaled into per-dimension ``bounds``.

    With a ``seed`` the sequence is randomised by a digital shift (XOR with a
    random 32-bit vector), which keeps its low-discrepancy structure.
    """
    bounds = np.asarray(bounds, dtype=np.float64).reshape(dims, 2)
    if not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be finite")
    u = sobol_points(dims, count)
    if seed is not None:
        rng = np.random.default_rng(seed)
        shift = rng.integers(0, 1 << BITS, size=dims, dtype=np.uint64)
        ints = (u * float(1 << BITS)).astype(np.uint64) ^ shift
        u = ints.astype(np.float64) / float(1 << BITS)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lo + u * (hi - lo)
