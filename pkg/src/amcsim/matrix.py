"""Dense matrix helpers shared by the circuit builders and the analyzers.

Matrices are plain 2-D ``float64`` numpy arrays; vectors are 1-D arrays.
The eigenvalue routine is a self-contained balanced Hessenberg reduction
followed by Francis double-shift QR iteration, so pole computations do
not depend on LAPACK behaviour.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_EIG_DIM = 256
MAX_QR_ITERATIONS = 10_000


class EigenConvergenceError(RuntimeError):
    """QR iteration did not deflate within the iteration budget."""

    def __init__(self, iterations, remaining):
        super().__init__(
            f"QR iteration failed to converge after {iterations} iterations "
            f"({remaining} eigenvalues unresolved)"
        )
        self.iterations = iterations
        self.remaining = remaining


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array with at least one entry."""
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_square(a, name="matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def as_vector(x, length=None, name="vector") -> np.ndarray:
    v = np.array(x, dtype=float).reshape(-1)
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def load_matrix_text(path) -> np.ndarray:
    """Read a whitespace-separated matrix, one row per line."""
    return as_matrix(np.loadtxt(Path(path), dtype=float, ndmin=2), str(path))


def save_matrix_text(path, a) -> None:
    np.savetxt(Path(path), as_matrix(a), fmt="%.17g")


# --------------------------------------------------------------------------
# Splitting and the diagonal normalization matrix
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPair:
    """Nonnegative pair with ``plus - minus`` equal to the source matrix."""

    plus: object
    minus: object

    def reconstruct(self) -> np.ndarray:
        return np.asarray(self.plus) - np.asarray(self.minus)


def split_canonical(a) -> SplitPair:
    """Split a signed matrix as ``A+ = (|A| + A)/2`` and ``A- = (|A| - A)/2``.

    Each entry lands wholly in one half, so ``min(plus, minus) == 0``
    elementwise and the reconstruction is exact in floating point.
    """
    m = as_matrix(a)
    plus = np.where(m > 0, m, 0.0)
    minus = np.where(m < 0, -m, 0.0)
    return SplitPair(plus=plus, minus=minus)


def build_u(a, load=1.0) -> np.ndarray:
    """Diagonal matrix ``diag(load + sum_j a[i, j])``.

    ``a`` is the normalized nonnegative array seen by the row nodes; for
    split circuits pass ``A+ + A-``. ``load`` is the load conductance in
    units of G0 (1 for the default load of exactly G0).
    """
    m = as_square(a)
    return np.diag(load + m.sum(axis=1))


def is_positive_definite(a) -> bool:
    """True iff the symmetric part of ``a`` is positive definite."""
    m = as_square(a)
    sym = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        return False
    return True


# --------------------------------------------------------------------------
# Eigenvalues
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    source_dim: int

    def __post_init__(self):
        if len(self.values) != self.source_dim:
            raise ValueError("spectrum length does not match source dimension")

    @property
    def min_real(self) -> float:
        return float(np.min(self.values.real))

    @property
    def max_real(self) -> float:
        return float(np.max(self.values.real))


def _balance(h: np.ndarray) -> None:
    """Parlett-Reinsch balancing in place with power-of-two scalings."""
    radix = 2.0
    sqr = radix * radix
    n = h.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(h[:, i]).sum() - abs(h[i, i])
            r = np.abs(h[i, :]).sum() - abs(h[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqr
            g = r * radix
            while c > g:
                f /= radix
                c /= sqr
            if (c + r) / f < 0.95 * s:
                done = False
                h[i, :] /= f
                h[:, i] *= f


def _hessenberg(h: np.ndarray) -> None:
    """Householder reduction to upper Hessenberg form, in place."""
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        alpha = -math.copysign(norm_x, x[0])
        v = x
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0


def _hqr(a: np.ndarray, max_iterations: int) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix by Francis double-shift QR.

    ``a`` is overwritten. Follows the classic EISPACK ``hqr`` structure:
    deflate on negligible subdiagonals, take ad hoc shifts at iterations
    10 and 20 of a stalled block.
    """
    n = a.shape[0]
    eps = np.finfo(float).eps
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.abs(np.triu(a, -1)).sum()
    nn = n - 1
    t = 0.0
    total = 0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= eps * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break

            if total >= max_iterations:
                raise EigenConvergenceError(total, nn + 1)
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                idx = np.arange(nn + 1)
                a[idx, idx] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1

            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= eps * v:
                    break
                m -= 1

            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0

            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                cols = slice(k, nn + 1)
                pv = a[k, cols] + q * a[k + 1, cols]
                if k != nn - 1:
                    pv += r * a[k + 2, cols]
                    a[k + 2, cols] -= pv * z
                a[k + 1, cols] -= pv * y
                a[k, cols] -= pv * x
                rows = slice(l, min(nn, k + 3) + 1)
                pv = x * a[rows, k] + y * a[rows, k + 1]
                if k != nn - 1:
                    pv += z * a[rows, k + 2]
                    a[rows, k + 2] -= pv * r
                a[rows, k + 1] -= pv * q
                a[rows, k] -= pv
    return wr + 1j * wi


def eigenvalues(a, max_dim=MAX_EIG_DIM, max_iterations=MAX_QR_ITERATIONS) -> Spectrum:
    """All eigenvalues of a real square matrix.

    Parameters
    ----------
    a : (n, n) array_like
        Real input matrix.
    max_dim : int
        Refuse matrices larger than this.
    max_iterations : int
        Total QR sweep budget across all deflations.

    Returns
    -------
    Spectrum
        Complex eigenvalues sorted by descending real part, then by
        imaginary part. Complex pairs are exact conjugates.

    Raises
    ------
    EigenConvergenceError
        If the sweep budget is exhausted.
    """
    m = as_square(a)
    n = m.shape[0]
    if n > max_dim:
        raise ValueError(f"matrix dimension {n} exceeds eigensolver cap {max_dim}")
    # an exact power-of-two rescale keeps QR products away from under/overflow
    peak = np.abs(m).max()
    scale = 2.0 ** round(math.log2(peak)) if peak > 0 else 1.0
    h = m / scale
    if n > 1:
        _balance(h)
        _hessenberg(h)
    vals = _hqr(h, max_iterations) * scale
    order = np.lexsort((vals.imag, -vals.real))
    return Spectrum(values=vals[order], source_dim=n)


def min_real_eigenvalue(a) -> float:
    """Smallest real part over the spectrum of ``a``."""
    return eigenvalues(a).min_real
