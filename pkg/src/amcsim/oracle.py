"""Reference solutions for every operation the circuits compute.

These routines are deliberately plain: Gaussian elimination, normal
equations and power iteration. None of them touch the circuit models,
so they serve as ground truth for the simulated steady states.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix import as_matrix, as_square, as_vector


class SingularMatrixError(ValueError):
    pass


class PowerIterationError(RuntimeError):
    pass


METHODS = ("direct_solve", "normal_equations", "min_norm", "power_iteration", "dense_mvm")


@dataclass(frozen=True)
class OracleResult:
    """A reference answer plus the residual that certifies it.

    ``residual`` is recomputed from ``value`` at construction time, so it
    can never disagree with the value it describes.
    """

    value: np.ndarray
    method: str
    matrix: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False, default=None)
    eigenvalue: float = None
    residual: float = field(init=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown oracle method {self.method!r}")
        object.__setattr__(self, "residual", _residual(self))


def _residual(res: OracleResult) -> float:
    a, x = res.matrix, res.value
    if res.method == "normal_equations":
        return float(np.linalg.norm(a.T @ (res.rhs - a @ x)))
    if res.method == "power_iteration":
        return float(np.linalg.norm(a @ x - res.eigenvalue * x))
    if res.method == "dense_mvm":
        return 0.0
    return float(np.linalg.norm(a @ x - res.rhs))


def mvm(a, x) -> np.ndarray:
    m = as_matrix(a)
    v = as_vector(x, m.shape[1], "x")
    out = np.zeros(m.shape[0])
    for j in range(m.shape[1]):
        out += m[:, j] * v[j]
    return out


def _eliminate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting."""
    n = a.shape[0]
    aug = np.hstack([a.astype(float), b.reshape(n, -1).astype(float)])
    scale = np.abs(a).max() if a.size else 0.0
    threshold = 1e-12 * scale
    for k in range(n):
        piv = k + int(np.argmax(np.abs(aug[k:, k])))
        if abs(aug[piv, k]) <= threshold or scale == 0.0:
            raise SingularMatrixError(
                f"matrix is singular to working precision (pivot {aug[piv, k]:.3e} at column {k})"
            )
        if piv != k:
            aug[[k, piv]] = aug[[piv, k]]
        factors = aug[k + 1:, k] / aug[k, k]
        aug[k + 1:, k:] -= np.outer(factors, aug[k, k:])
    x = np.zeros((n, aug.shape[1] - n))
    for k in range(n - 1, -1, -1):
        x[k] = (aug[k, n:] - aug[k, k + 1:n] @ x[k + 1:]) / aug[k, k]
    return x.reshape(b.shape)


def solve(a, y) -> OracleResult:
    m = as_square(a)
    rhs = as_vector(y, m.shape[0], "y")
    x = _eliminate(m, rhs)
    return OracleResult(value=x, method="direct_solve", matrix=m, rhs=rhs)


def pinv_left_solve(a, y) -> OracleResult:
    """Least-squares solution ``(A^T A)^-1 A^T y`` of a tall system."""
    m = as_matrix(a)
    n, k = m.shape
    if n < k:
        raise ValueError(f"left inverse needs rows >= cols, got {m.shape}")
    rhs = as_vector(y, n, "y")
    try:
        x = _eliminate(m.T @ m, m.T @ rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"A^T A is rank deficient: {exc}") from None
    return OracleResult(value=x, method="normal_equations", matrix=m, rhs=rhs)


def pinv_right_solve(a, y) -> OracleResult:
    """Minimum-norm solution ``A^T (A A^T)^-1 y`` of a broad system."""
    m = as_matrix(a)
    n, k = m.shape
    if n > k:
        raise ValueError(f"right inverse needs rows <= cols, got {m.shape}")
    rhs = as_vector(y, n, "y")
    try:
        z = _eliminate(m @ m.T, rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"A A^T is rank deficient: {exc}") from None
    return OracleResult(value=m.T @ z, method="min_norm", matrix=m, rhs=rhs)


def power_iteration(a, tol=1e-10, max_iters=100_000, seed=0) -> OracleResult:
    """Dominant eigenpair by repeated multiplication.

    The eigenvalue is the Rayleigh quotient of the current iterate, which
    recovers the sign when the dominant eigenvalue is negative (the
    iterate then flips every step, but the residual test is sign-blind).
    """
    m = as_square(a)
    n = m.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = m @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * max(1.0, abs(lam)):
            return OracleResult(value=v, method="power_iteration", matrix=m, eigenvalue=lam)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            v = rng.normal(size=n)
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
    raise PowerIterationError(
        f"power iteration did not converge in {max_iters} iterations "
        f"(residual {np.linalg.norm(m @ v - lam * v):.3e}); eigengap too small?"
    )


def extreme_eigenpair(a, which="largest", tol=1e-10, max_iters=200_000, seed=0) -> OracleResult:
    """Eigenpair at the top or bottom of the real spectrum of a symmetric matrix.

    Uses power iteration on ``rho*I + A`` or ``rho*I - A`` with ``rho`` a
    Gershgorin bound, which makes the wanted end of the spectrum dominant.
    """
    m = as_square(a)
    if which not in ("largest", "smallest"):
        raise ValueError("which must be 'largest' or 'smallest'")
    rho = float(np.abs(m).sum(axis=1).max())
    shifted = rho * np.eye(m.shape[0]) + (m if which == "largest" else -m)
    res = power_iteration(shifted, tol=tol, max_iters=max_iters, seed=seed)
    v = res.value
    lam = float(v @ m @ v)
    return OracleResult(value=v, method="power_iteration", matrix=m, eigenvalue=lam)
