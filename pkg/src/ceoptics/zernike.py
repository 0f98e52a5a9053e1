"""Zernike polynomials in Noll ordering, RMS-normalized on the unit disk.

Mode j=1 is piston; j=4 is defocus sqrt(3) (2 rho^2 - 1). The first 55
modes cover radial orders up to n = 9.
"""

from __future__ import annotations

from math import factorial

import numpy as np


def noll_to_nm(j: int) -> tuple[int, int]:
    """Noll index (1-based) to (radial order n, signed azimuthal m)."""
    if j < 1:
        raise ValueError("Noll indices start at 1")
    n = 0
    rem = j - 1
    while rem > n:
        n += 1
        rem -= n
    m = (-1) ** j * ((n % 2) + 2 * ((rem + ((n + 1) % 2)) // 2))
    return n, m


def radial_poly(n: int, m: int, rho):
    """R_n^m(rho) for m >= 0 with n - m even."""
    rho = np.asarray(rho)
    if (n - m) % 2:
        return np.zeros_like(rho)
    out = np.zeros_like(rho, dtype=float)
    for k in range((n - m) // 2 + 1):
        coeff = (
            (-1) ** k
            * factorial(n - k)
            / (factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k))
        )
        out = out + coeff * rho ** (n - 2 * k)
    return out


def zernike_mode(j: int, rho, theta):
    """Mode j evaluated at (rho, theta); no support masking applied."""
    n, m = noll_to_nm(j)
    r = radial_poly(n, abs(m), rho)
    if m == 0:
        return np.sqrt(n + 1.0) * r
    norm = np.sqrt(2.0 * (n + 1.0))
    if m > 0:
        return norm * r * np.cos(m * theta)
    return norm * r * np.sin(-m * theta)


def zernike_basis(n_modes: int, rho, theta) -> np.ndarray:
    """Stack of the first n_modes modes, shape (n_modes,) + rho.shape."""
    return np.stack([zernike_mode(j, rho, theta) for j in range(1, n_modes + 1)])
