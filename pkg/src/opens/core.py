"""Geometry validation and circulant/dense linear-algebra primitives.

Everything downstream (the boson closed forms, the operator quadrature and
the lattice determinants) goes through the small set of contracts defined
here: a validated interval layout, a palindromic symmetric circulant with
eigenvalue-product determinants, and a solve-based quadratic form
``v M^{-1} v^T``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from opens.errors import GeometryError, RegimeWarning, SingularMatrixError

#: imaginary residue tolerated when a complex intermediate must be real
IMAG_TOL = 1e-10


@dataclass(frozen=True)
class Geometry:
    """Interval layout: A = [0, L] is probed, B = [a, b] is measured.

    Lengths are dimensionless (lattice units for the free-fermion checks).
    ``eps`` is the UV cutoff regularizing coincident insertions and ``n``
    the replica count.
    """

    L: float
    a: float
    b: float
    eps: float
    n: int = 1

    def __post_init__(self):
        if not (0.0 < self.L < self.a < self.b):
            raise GeometryError(
                f"need 0 < L < a < b, got L={self.L}, a={self.a}, b={self.b}"
            )
        if self.eps <= 0.0:
            raise GeometryError(f"UV cutoff must be positive, got eps={self.eps}")
        if int(self.n) != self.n or self.n < 1:
            raise GeometryError(f"replica count must be an integer >= 1, got {self.n}")
        if self.ell2 / (2.0 * self.eps) <= 1.0:
            warnings.warn(
                f"(b-a)/(2 eps) = {self.ell2 / (2 * self.eps):.3g} <= 1: "
                "logarithms change sign, cutoff-dominated regime",
                RegimeWarning,
                stacklevel=2,
            )

    @property
    def ell2(self) -> float:
        """Length of the measured interval B."""
        return self.b - self.a

    @property
    def d(self) -> float:
        """Gap between A and B."""
        return self.a - self.L

    def with_n(self, n: int) -> "Geometry":
        return Geometry(self.L, self.a, self.b, self.eps, n)


@dataclass(frozen=True)
class SymmetricCirculant:
    """Symmetric circulant matrix stored as its first row.

    The row must be palindromic, ``row[j] == row[n-j]`` for j = 1..n-1,
    which makes the dense expansion ``M[j, k] = row[(j-k) % n]`` symmetric.
    """

    row: tuple

    def __init__(self, row):
        row = tuple(float(x) for x in row)
        n = len(row)
        if n == 0:
            raise ValueError("empty circulant row")
        for j in range(1, n):
            if not np.isclose(row[j], row[n - j], rtol=1e-12, atol=1e-12):
                raise ValueError(
                    f"first row is not palindromic at j={j}: "
                    f"{row[j]!r} != {row[n - j]!r}"
                )
        object.__setattr__(self, "row", row)

    @property
    def n(self) -> int:
        return len(self.row)

    def dense(self) -> np.ndarray:
        n = self.n
        r = np.asarray(self.row)
        idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        return r[idx]

    def eigenvalues(self) -> np.ndarray:
        """Real circulant eigenvalues sum_j row[j] e^{2 pi i j k / n}."""
        lam = np.fft.fft(np.asarray(self.row))
        resid = np.abs(lam.imag).max()
        if resid > IMAG_TOL * max(1.0, np.abs(lam.real).max()):
            raise ValueError(f"circulant eigenvalues not real, residue {resid:.3e}")
        return lam.real


def circulant_determinant(c: SymmetricCirculant) -> float:
    """Determinant as the product of circulant eigenvalues.

    Accumulated in log space (sum of log |eigenvalue| plus a sign) so that
    rows with entries of order log(1/eps^2) do not overflow.
    """
    lam = c.eigenvalues()
    if np.any(lam == 0.0):
        return 0.0
    sign = 1.0 if np.count_nonzero(lam < 0) % 2 == 0 else -1.0
    return sign * float(np.exp(np.sum(np.log(np.abs(lam)))))


def circulant_log_determinant(c: SymmetricCirculant) -> float:
    """log det for positive-definite circulants (raises otherwise)."""
    lam = c.eigenvalues()
    if np.any(lam <= 0.0):
        raise SingularMatrixError(
            f"non-positive circulant eigenvalue, min = {lam.min():.3e}"
        )
    return float(np.sum(np.log(lam)))


def circulant_inverse_row_sum(c: SymmetricCirculant) -> float:
    """Row sum of the inverse, sum_j (M^{-1})_{jl} = 1 / sum_m row[m].

    Column-independent because every row of a circulant sums identically.
    """
    s = float(np.sum(c.row))
    if s == 0.0:
        raise SingularMatrixError("circulant row sums to zero, inverse row sum undefined")
    return 1.0 / s


def quadratic_form_cn(M: np.ndarray) -> float:
    """v M^{-1} v^T with v = (1, ..., 1), via a linear solve.

    The quantity controls the width of the measured-charge distribution in
    every replica computation. Complex input is accepted; the result must
    be real up to ``IMAG_TOL``.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"square matrix required, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")
    v = np.ones(M.shape[0], dtype=M.dtype)
    try:
        x = np.linalg.solve(M, v)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            f"singular matrix in quadratic form (cond ~ {np.linalg.cond(M):.3e})"
        ) from exc
    cond = np.linalg.cond(M)
    if cond > 1e14:
        raise SingularMatrixError(f"matrix numerically singular, cond = {cond:.3e}")
    val = complex(v @ x)
    if abs(val.imag) > IMAG_TOL * max(1.0, abs(val.real)):
        raise ValueError(f"quadratic form not real: {val!r}")
    return val.real


def require_real(z, tol: float = IMAG_TOL, what: str = "value") -> float:
    """Strip an imaginary residue below ``tol``; larger residue is an error."""
    z = complex(z)
    if abs(z.imag) > tol * max(1.0, abs(z.real)):
        raise ValueError(f"{what} has imaginary residue {z.imag:.3e}")
    return z.real
