"""Field-free rigid-rotor basis and banded matrices of cos^2(theta), cos^4(theta).

The interaction with a linearly polarized field conserves M, so every operator
here lives inside a single M block spanned by ``|J, M>`` with
``J = |M|, ..., J_max``.  Matrix elements are assembled from Wigner 3j symbols
evaluated exactly in integer arithmetic (Racah formula) and only converted to
floating point at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt

import numpy as np

J_MAX_LIMIT = 512

# cos^2 = 1/3 + 2/3 P2 ;  cos^4 = 1/5 + 4/7 P2 + 8/35 P4
COS2_LEGENDRE = {0: Fraction(1, 3), 2: Fraction(2, 3)}
COS4_LEGENDRE = {0: Fraction(1, 5), 2: Fraction(4, 7), 4: Fraction(8, 35)}


@dataclass(frozen=True)
class RotorLevel:
    J: int
    M: int

    def __post_init__(self):
        if self.J < 0 or abs(self.M) > self.J:
            raise ValueError(f"invalid rotor level J={self.J}, M={self.M}")

    def energy(self, B: float) -> float:
        """Field-free energy ``B J (J + 1)`` in the units of `B`."""
        return B * self.J * (self.J + 1)


@dataclass(frozen=True)
class BasisBlock:
    """All levels ``|J, M>`` of fixed `M` with ``|M| <= J <= J_max``."""

    M: int
    J_max: int
    levels: tuple[RotorLevel, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.J_max < abs(self.M):
            raise ValueError(f"J_max={self.J_max} below |M|={abs(self.M)}")
        if self.J_max > J_MAX_LIMIT:
            raise ValueError(f"J_max={self.J_max} exceeds supported limit {J_MAX_LIMIT}")
        levels = tuple(RotorLevel(J, self.M) for J in range(abs(self.M), self.J_max + 1))
        object.__setattr__(self, "levels", levels)

    @property
    def J_min(self) -> int:
        return abs(self.M)

    @property
    def dim(self) -> int:
        return self.J_max - abs(self.M) + 1

    @property
    def J_values(self) -> np.ndarray:
        return np.arange(self.J_min, self.J_max + 1)

    def index(self, J: int) -> int:
        if not self.J_min <= J <= self.J_max:
            raise IndexError(f"J={J} outside block [{self.J_min}, {self.J_max}]")
        return J - self.J_min

    def energies(self, B: float) -> np.ndarray:
        J = self.J_values
        return B * J * (J + 1.0)


@dataclass(frozen=True, eq=False)
class BandedOperator:
    """Real symmetric banded matrix on a `BasisBlock`.

    ``bands[k, i]`` holds the entry between block indices ``i`` and ``i + k``
    (lower storage as used by LAPACK ``?sbev``).  Rows ``k`` odd are zero.
    """

    block: BasisBlock
    half_bandwidth: int
    bands: np.ndarray

    def entry(self, J: int, Jp: int) -> float:
        i, j = self.block.index(J), self.block.index(Jp)
        k = abs(i - j)
        if k > self.half_bandwidth:
            return 0.0
        return float(self.bands[k, min(i, j)])

    def diagonal(self, k: int = 0) -> np.ndarray:
        """Entries ``(J, J + k)``; length ``dim - k``."""
        k = abs(k)
        if k > self.half_bandwidth:
            return np.zeros(max(self.block.dim - k, 0))
        return self.bands[k, : self.block.dim - k].copy()

    def toarray(self) -> np.ndarray:
        n = self.block.dim
        out = np.zeros((n, n))
        for k in range(min(self.half_bandwidth, n - 1) + 1):
            d = self.bands[k, : n - k]
            out += np.diag(d, k)
            if k:
                out += np.diag(d, -k)
        return out

    def parity_part(self, parity: int) -> tuple[np.ndarray, np.ndarray]:
        """Restrict to levels with ``J % 2 == parity``.

        Returns ``(J_values, dense_matrix)``; for half-bandwidth 2 the
        restriction is tridiagonal, for 4 pentadiagonal.
        """
        J = self.block.J_values
        sel = np.flatnonzero(J % 2 == parity)
        return J[sel], self.toarray()[np.ix_(sel, sel)]


def _is_triangle(a: int, b: int, c: int) -> bool:
    return abs(a - b) <= c <= a + b


@lru_cache(maxsize=None)
def wigner_3j_squared(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> tuple[int, Fraction]:
    """Exact 3j symbol as ``(sign, square)`` for integer angular momenta."""
    if m1 + m2 + m3 != 0 or not _is_triangle(j1, j2, j3):
        return 0, Fraction(0)
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0, Fraction(0)
    f = factorial
    delta_sq = Fraction(f(j1 + j2 - j3) * f(j1 - j2 + j3) * f(-j1 + j2 + j3), f(j1 + j2 + j3 + 1))
    pref_sq = delta_sq * (
        f(j1 + m1) * f(j1 - m1) * f(j2 + m2) * f(j2 - m2) * f(j3 + m3) * f(j3 - m3)
    )
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            f(k) * f(j1 + j2 - j3 - k) * f(j1 - m1 - k) * f(j2 + m2 - k)
            * f(j3 - j2 + m1 + k) * f(j3 - j1 - m2 + k)
        )
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0, Fraction(0)
    sign = (-1) ** (j1 - j2 - m3) * (1 if total > 0 else -1)
    return sign, pref_sq * total * total


def wigner_3j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    sign, sq = wigner_3j_squared(j1, j2, j3, m1, m2, m3)
    if sign == 0:
        return 0.0
    return sign * _sqrt_fraction(sq)


def _sqrt_fraction(q: Fraction) -> float:
    # float(Fraction) divides the big integers exactly before rounding
    return sqrt(float(q))


def legendre_matrix_element(l: int, J: int, Jp: int, M: int) -> float:
    """``<J', M| P_l(cos theta) |J, M>`` for ``l`` in {0, 2, 4}.

    Uses ``(-1)^M sqrt((2J+1)(2J'+1)) (J' l J; 0 0 0) (J' l J; -M 0 M)``.
    """
    if l not in (0, 2, 4):
        raise ValueError(f"unsupported multipole order l={l}")
    if J < 0 or Jp < 0 or abs(M) > min(J, Jp):
        raise ValueError(f"|M|={abs(M)} exceeds min(J, J')={min(J, Jp)}")
    if l == 0:
        return 1.0 if J == Jp else 0.0
    if abs(J - Jp) > l or (J - Jp) % 2:
        return 0.0
    s1, q1 = wigner_3j_squared(Jp, l, J, 0, 0, 0)
    s2, q2 = wigner_3j_squared(Jp, l, J, -M, 0, M)
    if s1 == 0 or s2 == 0:
        return 0.0
    sign = (-1) ** (M % 2) * s1 * s2
    return sign * _sqrt_fraction(q1 * q2 * (2 * J + 1) * (2 * Jp + 1))


def _expansion_operator(block: BasisBlock, coeffs: dict[int, Fraction], half_bandwidth: int) -> BandedOperator:
    n = block.dim
    bands = np.zeros((half_bandwidth + 1, n))
    J0 = block.J_min
    for k in range(0, half_bandwidth + 1, 2):
        for i in range(n - k):
            J, Jp = J0 + i, J0 + i + k
            bands[k, i] = sum(
                float(c) * legendre_matrix_element(l, J, Jp, block.M) for l, c in coeffs.items()
            )
    return BandedOperator(block, half_bandwidth, bands)


@lru_cache(maxsize=256)
def cos2_operator(block: BasisBlock) -> BandedOperator:
    """Matrix of cos^2(theta) on `block` (half-bandwidth 2)."""
    return _expansion_operator(block, COS2_LEGENDRE, 2)


@lru_cache(maxsize=256)
def cos4_operator(block: BasisBlock) -> BandedOperator:
    """Matrix of cos^4(theta) on `block` (half-bandwidth 4)."""
    return _expansion_operator(block, COS4_LEGENDRE, 4)
