"""Independent reference computations shared by the tests."""

from __future__ import annotations

import itertools
from fractions import Fraction

import mpmath as mp
import numpy as np

HALF_GRID = (Fraction(0), Fraction(1, 2), Fraction(1))


def gram_charpoly(A) -> tuple[Fraction, Fraction, Fraction]:
    """Exact ``(trace, sum of principal 2x2 minors, det)`` of ``A^T A`` for a 3x3 rational ``A``."""
    S = [[sum(A[k][i] * A[k][j] for k in range(3)) for j in range(3)] for i in range(3)]
    tr = S[0][0] + S[1][1] + S[2][2]
    c2 = (
        S[0][0] * S[1][1] - S[0][1] * S[1][0]
        + S[0][0] * S[2][2] - S[0][2] * S[2][0]
        + S[1][1] * S[2][2] - S[1][2] * S[2][1]
    )  # fmt: skip
    det = (
        S[0][0] * (S[1][1] * S[2][2] - S[1][2] * S[2][1])
        - S[0][1] * (S[1][0] * S[2][2] - S[1][2] * S[2][0])
        + S[0][2] * (S[1][0] * S[2][1] - S[1][1] * S[2][0])
    )
    return tr, c2, det


def _mpf(q: Fraction):
    return mp.mpf(q.numerator) / q.denominator


def cubic_singular_values(tr: Fraction, c2: Fraction, det: Fraction, dps: int = 50) -> list[float]:
    """Square roots of the roots of ``x^3 - tr x^2 + c2 x - det`` (all real, >= 0), descending.

    Trigonometric form of the depressed cubic, evaluated in high precision.
    """
    with mp.workdps(dps):
        a, b, c = -_mpf(tr), _mpf(c2), -_mpf(det)
        p = b - a**2 / 3
        q = 2 * a**3 / 27 - a * b / 3 + c
        if p == 0:
            roots = [-a / 3] * 3
        else:
            r = 2 * mp.sqrt(-p / 3)
            arg = 3 * q / (p * r)
            arg = max(min(arg, mp.mpf(1)), mp.mpf(-1))
            th = mp.acos(arg) / 3
            roots = [r * mp.cos(th - 2 * mp.pi * k / 3) - a / 3 for k in range(3)]
        sv = sorted((mp.sqrt(max(x, 0)) for x in roots), reverse=True)
        return [float(s) for s in sv]


def half_grid_cases():
    """All 3x3 matrices over {0, 1/2, 1} as float arrays plus their reference singular values."""
    cache: dict = {}
    mats, refs = [], []
    for e in itertools.product(HALF_GRID, repeat=9):
        A = (e[0:3], e[3:6], e[6:9])
        key = gram_charpoly(A)
        if key not in cache:
            cache[key] = cubic_singular_values(*key)
        mats.append([[float(x) for x in row] for row in A])
        refs.append(cache[key])
    return np.array(mats), np.array(refs), len(cache)
