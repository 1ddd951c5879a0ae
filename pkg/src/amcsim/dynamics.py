"""Transient simulation of circuit systems and settling measurements."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import oracle
from .circuits import CircuitSystem
from .matrix import as_square, as_vector, eigenvalues

STEP_FACTOR = 0.1
MAX_STEPS = 2_000_000
EIG_INIT_V = 1e-3
DIRECTION_VAR_TOL = 1e-6
RAIL_FRACTION = 0.999


class SimulationError(RuntimeError):
    pass


class StepSizeError(SimulationError):
    pass


class NonFiniteStateError(SimulationError):
    def __init__(self, step):
        super().__init__(f"state became non-finite at step {step}")
        self.step = step


class NoLinearSteadyState(ValueError):
    pass


class NotSettledError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    clamped: np.ndarray
    output_indices: tuple
    v_sat: float
    f_gbwp: float

    @property
    def outputs(self) -> np.ndarray:
        return self.states[:, list(self.output_indices)]

    @property
    def final_output(self) -> np.ndarray:
        return self.outputs[-1]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t"] + [f"s{i}" for i in range(self.states.shape[1])])
            for t, row in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class SettleReport:
    settle_time: Optional[float]
    reference: np.ndarray
    criterion: float

    @property
    def settled(self) -> bool:
        return self.settle_time is not None


def max_stable_step(sys: CircuitSystem) -> float:
    """``STEP_FACTOR / max |eig(j)|``.

    The modulus, not just the real part, bounds the step so that lightly
    damped oscillatory modes stay inside the RK4 stability region.
    """
    rate = float(np.max(np.abs(eigenvalues(sys.j).values)))
    if rate == 0.0:
        return math.inf
    return STEP_FACTOR / rate


def initial_state(sys: CircuitSystem, seed: int = 0) -> np.ndarray:
    """Zero for driven circuits; small uniform noise for the self-sustained loop.

    The all-zero state is a fixed point of the eigenvector circuit, so it
    starts from a seeded draw in ``[-1 mV, 1 mV]``.
    """
    if sys.topology == "eigenvector":
        rng = np.random.default_rng(seed)
        return rng.uniform(-EIG_INIT_V, EIG_INIT_V, sys.state_dim)
    return np.zeros(sys.state_dim)


def _clamped_rhs(sys, x):
    d = sys.j @ x + sys.drive
    mask = sys.sat_mask
    hold = mask & (((x >= sys.v_sat) & (d > 0)) | ((x <= -sys.v_sat) & (d < 0)))
    d[hold] = 0.0
    return d


def _rk4_propagator(j, drive, h):
    """Exact RK4 step map ``x -> P x + q`` for the linear system ``j x + drive``."""
    n = j.shape[0]
    eye = np.eye(n)
    hj = h * j
    hj2 = hj @ hj
    hj3 = hj2 @ hj
    prop = eye + hj + hj2 / 2 + hj3 / 6 + hj3 @ hj / 24
    offset = h * (eye + hj / 2 + hj2 / 6 + hj3 / 24) @ drive
    return prop, offset


def _compose_power(prop, offset, k):
    """Map of ``k`` consecutive affine steps ``x -> prop x + offset``."""
    n = prop.shape[0]
    acc_p, acc_q = np.eye(n), np.zeros(n)
    base_p, base_q = prop, offset
    while k:
        if k & 1:
            acc_p, acc_q = base_p @ acc_p, base_p @ acc_q + base_q
        base_p, base_q = base_p @ base_p, base_p @ base_q + base_q
        k >>= 1
    return acc_p, acc_q


class _Stepper:
    """RK4 for a linear system whose masked states are held at the rails.

    While the set of held states is unchanged, the clamped dynamics are
    linear (held rows frozen), so ``k`` RK4 steps collapse into one cached
    affine map. A block whose end state leaves a rail or pushes a free
    state past one is redone step by step; those single steps fall back to
    stage-by-stage RK4 with the clamp applied at every stage when the held
    set changes within the step.
    """

    def __init__(self, sys: CircuitSystem, h: float):
        self.sys = sys
        self.h = h
        self.saturating = bool(sys.sat_mask.any())
        self.cache = {}

    def _held(self, x):
        sys = self.sys
        if not self.saturating:
            return sys.sat_mask
        d = sys.j @ x + sys.drive
        return sys.sat_mask & (((x >= sys.v_sat) & (d > 0)) | ((x <= -sys.v_sat) & (d < 0)))

    def _map(self, held, k):
        key = (held.tobytes(), k)
        if key not in self.cache:
            if (held.tobytes(), 1) in self.cache:
                one = self.cache[(held.tobytes(), 1)]
            else:
                j = self.sys.j.copy()
                drive = self.sys.drive.copy()
                j[held] = 0.0
                drive[held] = 0.0
                one = _rk4_propagator(j, drive, self.h)
                self.cache[(held.tobytes(), 1)] = one
            self.cache[key] = one if k == 1 else _compose_power(*one, k)
        return self.cache[key]

    def _consistent(self, held, cand):
        if not self.saturating:
            return True
        sys = self.sys
        free = sys.sat_mask & ~held
        if np.any(np.abs(cand[free]) > sys.v_sat):
            return False
        return np.array_equal(self._held(cand) & held, held)

    def _single(self, x):
        held = self._held(x)
        prop, offset = self._map(held, 1)
        cand = prop @ x + offset
        if self._consistent(held, cand):
            return cand
        sys, h = self.sys, self.h
        k1 = _clamped_rhs(sys, x)
        k2 = _clamped_rhs(sys, x + 0.5 * h * k1)
        k3 = _clamped_rhs(sys, x + 0.5 * h * k2)
        k4 = _clamped_rhs(sys, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x[sys.sat_mask] = np.clip(x[sys.sat_mask], -sys.v_sat, sys.v_sat)
        return x

    def advance(self, x, k):
        held = self._held(x)
        prop, offset = self._map(held, k)
        cand = prop @ x + offset
        if k == 1 or self._consistent(held, cand):
            return cand if k > 1 or not self.saturating else self._single(x)
        for _ in range(k):
            x = self._single(x)
        return x


def integrate(sys: CircuitSystem, t_end: float, x0=None, dt: float = None,
              record_every: int = 1, max_steps: int = MAX_STEPS) -> Trajectory:
    """Fixed-step classical RK4 from ``x0`` over ``[0, t_end]``.

    The step is the largest ``t_end / N`` not exceeding ``dt`` (default:
    :func:`max_stable_step`). Masked states are clipped to ``+-v_sat``
    and their outward derivative is zeroed at the rail. One sample is
    stored every ``record_every`` steps, plus the final state.

    RK4 applied to a linear system is the fourth-order Taylor propagator
    of the step, so stretches with a fixed set of rail-held states are
    advanced between samples by a single precomputed affine map.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n = sys.state_dim
    x = np.zeros(n) if x0 is None else as_vector(x0, n, "x0").copy()
    h_max = max_stable_step(sys)
    if dt is not None:
        h_max = min(h_max, dt)
    steps = max(1, math.ceil(t_end / h_max)) if math.isfinite(h_max) else 1
    if steps > max_steps:
        raise StepSizeError(
            f"{steps} steps of {t_end / steps:.3e} s needed (limit {max_steps}); system too stiff"
        )
    h = t_end / steps
    block = max(1, int(record_every))
    mask = sys.sat_mask
    if mask.any():
        x[mask] = np.clip(x[mask], -sys.v_sat, sys.v_sat)
    stepper = _Stepper(sys, h)
    counts = [block] * (steps // block) + ([steps % block] if steps % block else [])
    times = np.empty(len(counts) + 1)
    states = np.empty((len(counts) + 1, n))
    clamped = np.zeros(len(counts) + 1, dtype=bool)
    times[0], states[0] = 0.0, x
    done = 0
    for i, k in enumerate(counts, start=1):
        with np.errstate(over="ignore", invalid="ignore"):
            x = stepper.advance(x, k)
        done += k
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(done)
        times[i] = done * h
        states[i] = x
        clamped[i] = stepper.saturating and bool(np.any(np.abs(x[mask]) >= sys.v_sat))
    return Trajectory(times=times, states=states, clamped=clamped,
                      output_indices=sys.output_indices, v_sat=sys.v_sat, f_gbwp=sys.f_gbwp)


def steady_state(sys: CircuitSystem, full: bool = False) -> np.ndarray:
    """Equilibrium of the linear dynamics, ``j x = -drive``."""
    if sys.topology == "eigenvector":
        raise NoLinearSteadyState("eigenvector circuit has no linear steady state; integrate it")
    try:
        x = oracle.solve(sys.j, -sys.drive).value
    except oracle.SingularMatrixError as exc:
        raise NoLinearSteadyState(f"state matrix is singular (marginal poles): {exc}") from None
    return x if full else sys.output(x)


def settle_time(traj: Trajectory, x_star, tol: float = 0.01, output_indices=None) -> SettleReport:
    """Earliest sample after which ``|y(t) - x*| / |x*| <= tol`` holds for good."""
    ref = np.asarray(x_star, dtype=float)
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise ValueError("settle criterion is relative; reference vector is zero")
    idx = traj.output_indices if output_indices is None else output_indices
    y = traj.states[:, list(idx)]
    err = np.linalg.norm(y - ref, axis=1) / norm
    bad = np.nonzero(err > tol)[0]
    if bad.size == 0:
        t = float(traj.times[0])
    elif bad[-1] == len(err) - 1:
        t = None
    else:
        t = float(traj.times[bad[-1] + 1])
    return SettleReport(settle_time=t, reference=ref, criterion=tol)


def default_horizon(sys: CircuitSystem, decades: float = 6.0) -> float:
    """Time for the slowest decaying mode to shrink by ``10**decades``."""
    re = eigenvalues(sys.j).values.real
    slow = np.max(re[re < 0]) if np.any(re < 0) else -sys.f_gbwp
    return decades * math.log(10) / abs(slow)


# --------------------------------------------------------------------------
# Eigenvector runs
# --------------------------------------------------------------------------


class EigenResult(NamedTuple):
    angle: float
    rayleigh: float
    amplitude_ratio: float


def _directions(y):
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    d = y / np.where(norms == 0, 1.0, norms)
    ref = d[-1]
    flip = np.sign(d @ ref)
    flip[flip == 0] = 1.0
    return d * flip[:, None]


def direction_variance(traj: Trajectory, window: float = None) -> float:
    """Variance of the normalized output direction over the final window.

    The window defaults to ``10 / f_gbwp``.
    """
    window = 10.0 / traj.f_gbwp if window is None else window
    sel = traj.times >= traj.times[-1] - window
    d = _directions(traj.outputs[sel])
    return float(np.mean(np.sum((d - d.mean(axis=0)) ** 2, axis=1)))


def is_direction_settled(traj: Trajectory, threshold: float = DIRECTION_VAR_TOL, window=None) -> bool:
    """True once the output rides the rails with a steady direction.

    A settled loop pins its largest output at ``v_sat``; a steady
    direction alone is not enough, since the linear growth phase already
    has one.
    """
    window = 10.0 / traj.f_gbwp if window is None else window
    sel = traj.times >= traj.times[-1] - window
    peak = np.max(np.abs(traj.outputs[sel]), axis=1)
    if np.any(peak < RAIL_FRACTION * traj.v_sat):
        return False
    return direction_variance(traj, window) < threshold


def growth_rate(sys: CircuitSystem) -> float:
    return eigenvalues(sys.j).max_real


def integrate_until_settled(sys: CircuitSystem, x0=None, seed: int = 0, max_chunks: int = 12,
                            record_every: int = 1) -> Trajectory:
    """Integrate a self-sustained circuit in chunks until its direction settles.

    The first chunk covers the exponential rise from the initial state to
    the rails at the fastest growth rate, with a margin for the saturated
    phase. Returns the full stitched trajectory.

    Raises
    ------
    NotSettledError
        If the loop gain is not above 1 (nothing grows) or the direction
        keeps moving after ``max_chunks`` chunks.
    """
    x = initial_state(sys, seed) if x0 is None else as_vector(x0, sys.state_dim, "x0")
    rate = growth_rate(sys)
    if rate <= 0:
        raise NotSettledError("loop gain <= 1: no growing mode, the state decays to zero")
    amp = max(np.max(np.abs(x)), 1e-12)
    chunk = 1.5 * math.log(sys.v_sat / amp) / rate + 200.0 / sys.f_gbwp
    parts = []
    t0 = 0.0
    for _ in range(max_chunks):
        tr = integrate(sys, chunk, x, record_every=record_every)
        parts.append((tr.times + t0, tr.states, tr.clamped))
        t0 += chunk
        x = tr.states[-1]
        merged = _merge(parts, tr)
        if is_direction_settled(merged):
            return merged
    raise NotSettledError(f"direction still moving after {t0:.3e} s")


def _merge(parts, template: Trajectory) -> Trajectory:
    times = [parts[0][0]] + [p[0][1:] for p in parts[1:]]
    states = [parts[0][1]] + [p[1][1:] for p in parts[1:]]
    clamped = [parts[0][2]] + [p[2][1:] for p in parts[1:]]
    return Trajectory(times=np.concatenate(times), states=np.concatenate(states),
                      clamped=np.concatenate(clamped), output_indices=template.output_indices,
                      v_sat=template.v_sat, f_gbwp=template.f_gbwp)


def measure_eigen_result(traj: Trajectory, a, sign: str = "positive") -> EigenResult:
    """Compare the settled output of an eigenvector run with the oracle eigenvector.

    ``sign="positive"`` targets the largest eigenvalue, ``"negative"`` the
    most negative one. The Rayleigh quotient assumes symmetric ``a``.
    """
    m = as_square(a)
    if not is_direction_settled(traj):
        raise NotSettledError("eigenvector trajectory has not settled")
    x = traj.final_output
    ref = oracle.extreme_eigenpair(m, "largest" if sign == "positive" else "smallest")
    return EigenResult(
        angle=vector_angle(x, ref.value),
        rayleigh=float(x @ m @ x / (x @ x)),
        amplitude_ratio=float(np.max(np.abs(x)) / traj.v_sat),
    )


def vector_angle(u, v) -> float:
    """Angle between two lines (sign-insensitive), in radians."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
