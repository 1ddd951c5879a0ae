"""Poles, stability verdicts and response-time bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .circuits import CircuitSystem
from .matrix import as_square, build_u, eigenvalues

LN100 = math.log(100.0)
ORIGIN_TOL_REL = 1e-6

VERDICTS = ("stable", "marginal", "unstable")


@dataclass(frozen=True)
class PoleReport:
    poles: np.ndarray
    dominant: Optional[complex]
    lambda_min: Optional[float]
    verdict: str
    bound_time: Optional[float]
    origin_tol: float

    def to_dict(self) -> dict:
        def c(z):
            return None if z is None else {"re": float(z.real), "im": float(z.imag)}

        return {
            "poles": [c(p) for p in self.poles],
            "dominant": c(self.dominant),
            "lambda_min": self.lambda_min,
            "verdict": self.verdict,
            "bound_time": self.bound_time,
        }


def verdict(poles, origin_tol: float) -> str:
    re = np.real(np.asarray(poles))
    if np.any(re > origin_tol):
        return "unstable"
    if np.any(np.abs(re) <= origin_tol):
        return "marginal"
    return "stable"


def dominant_pole(poles, origin_tol: float) -> Optional[complex]:
    """Pole with the largest real part, ignoring poles sitting on the imaginary axis."""
    p = np.asarray(poles)
    keep = p[np.abs(p.real) > origin_tol]
    if keep.size == 0:
        return None
    return complex(keep[np.argmax(keep.real)])


def ideal_inversion_poles(a, f_gbwp: float) -> np.ndarray:
    """Infinite-gain inversion poles ``-f_gbwp * eig(U^-1 A)``."""
    m = as_square(a)
    u = np.diag(build_u(m))
    return -f_gbwp * eigenvalues(m / u[:, None]).values


def response_bound(lambda_min: float, f_gbwp: float) -> float:
    """1 %-settling time of a single mode at ``-f_gbwp * lambda_min``."""
    if lambda_min <= 0:
        raise ValueError(f"lambda_min={lambda_min:g} is not positive: circuit is not stable")
    return LN100 / (f_gbwp * lambda_min)


def _lambda_min(sys: CircuitSystem, poles) -> Optional[float]:
    if sys.topology == "inversion":
        a = np.array(sys.meta["a"])
        u = np.array(sys.meta["u"])
        return eigenvalues(a / u[:, None]).min_real
    if sys.topology == "inversion_split":
        # the 2n-state matrix stands in for the split circuit's associated matrix
        return float(np.min(-np.real(poles)) / sys.meta["oa"]["f_gbwp"])
    return None


def poles(sys: CircuitSystem, origin_tol: float = None) -> PoleReport:
    """Exact finite-gain poles of a circuit: the eigenvalues of its state matrix."""
    tol = ORIGIN_TOL_REL * sys.f_gbwp if origin_tol is None else origin_tol
    p = eigenvalues(sys.j).values
    dom = dominant_pole(p, tol)
    v = verdict(p, tol)
    bound = None
    if dom is not None and v != "unstable":
        bound = LN100 / abs(dom.real)
    return PoleReport(poles=p, dominant=dom, lambda_min=_lambda_min(sys, p), verdict=v,
                      bound_time=bound, origin_tol=tol)
