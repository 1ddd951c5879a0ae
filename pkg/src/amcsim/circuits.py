"""State-space models of the crosspoint-array circuits.

Every op-amp is a single-pole amplifier ``L(s) = L0 / (1 + s/w0)`` with
``w0 = f_gbwp / L0``. An amplifier whose inverting node sees a weighted
average ``v-`` of the voltages around it obeys ``dv/dt = w0 (-L0 v- - v)``.
Each builder writes the resulting linear system as::

    d(state)/dt = J @ state + drive

with saturation applied by the integrator to masked states. Conductance
matrices are normalized by ``g0`` inside the builders, so ``A`` below is
always the dimensionless matrix stored in the array.

Sign chains follow the ideal equations: the MVM circuit reads ``-G x/g_f``
from applied voltages ``x`` (apply ``-x`` to get ``+Ax``); inversion
settles at ``A x = y``; the pseudoinverse circuits settle on the normal
equations; the eigenvector loop settles on ``A x = lambda x``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .device import ConductanceMatrix, DeviceConfig, read_matrix
from .matrix import SplitPair, as_vector, build_u

TOPOLOGIES = (
    "mvm",
    "mvm_split_col",
    "mvm_split_row",
    "inversion",
    "inversion_split",
    "pinv_left",
    "pinv_right",
    "eigenvector",
)


@dataclass(frozen=True)
class OAParams:
    l0: float = 1e5
    f_gbwp: float = 1e6
    v_sat: float = 1.0

    def __post_init__(self):
        if self.l0 <= 1:
            raise ValueError("l0 must exceed 1")
        if self.f_gbwp <= 0:
            raise ValueError("f_gbwp must be positive")
        if self.v_sat <= 0:
            raise ValueError("v_sat must be positive")

    @property
    def omega0(self) -> float:
        """Open-loop 3-dB bandwidth, ``f_gbwp / l0``."""
        return self.f_gbwp / self.l0


@dataclass(frozen=True)
class TIAConfig:
    g_f: float

    def __post_init__(self):
        if self.g_f <= 0:
            raise ValueError("feedback conductance must be positive")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CircuitSystem:
    """Linear dynamics ``dx/dt = j x + drive`` plus a per-state rail clamp.

    ``f_gbwp`` is the speed scale of the fastest amplifier family in the
    circuit and sets the tolerance used to call a pole "at the origin".
    """

    topology: str
    j: np.ndarray
    drive: np.ndarray
    sat_mask: np.ndarray
    output_indices: tuple
    v_sat: float
    f_gbwp: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        j = _frozen(self.j)
        n = j.shape[0]
        if j.shape != (n, n):
            raise ValueError("state matrix must be square")
        drive = _frozen(self.drive)
        mask = np.array(self.sat_mask, dtype=bool)
        mask.setflags(write=False)
        if drive.shape != (n,) or mask.shape != (n,):
            raise ValueError("drive and sat_mask must match the state dimension")
        idx = tuple(int(i) for i in self.output_indices)
        if any(i < 0 or i >= n for i in idx):
            raise ValueError("output index out of range")
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "drive", drive)
        object.__setattr__(self, "sat_mask", mask)
        object.__setattr__(self, "output_indices", idx)

    @property
    def state_dim(self) -> int:
        return self.j.shape[0]

    def rhs(self, state: np.ndarray) -> np.ndarray:
        """Unclamped time derivative."""
        return self.j @ state + self.drive

    def output(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state)[..., list(self.output_indices)]

    def to_dict(self) -> dict:
        return {
            "topology": self.topology,
            "state_dim": self.state_dim,
            "j": self.j.tolist(),
            "drive": self.drive.tolist(),
            "sat_mask": self.sat_mask.tolist(),
            "output_indices": list(self.output_indices),
            "v_sat": self.v_sat,
            "f_gbwp": self.f_gbwp,
            "meta": self.meta,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitSystem":
        return cls(
            topology=d["topology"],
            j=np.array(d["j"], dtype=float).reshape(d["state_dim"], d["state_dim"]),
            drive=d["drive"],
            sat_mask=d["sat_mask"],
            output_indices=tuple(d["output_indices"]),
            v_sat=d["v_sat"],
            f_gbwp=d["f_gbwp"],
            meta=d.get("meta", {}),
        )


def _oa_meta(oa: OAParams) -> dict:
    return {"l0": oa.l0, "f_gbwp": oa.f_gbwp, "v_sat": oa.v_sat}


def _normalized(gm: ConductanceMatrix, name="array") -> np.ndarray:
    a = read_matrix(gm)
    if np.any(a < 0):
        raise ValueError(f"{name} holds negative conductances")
    return a


def _split_arrays(split: SplitPair):
    plus, minus = split.plus, split.minus
    if plus.shape != minus.shape:
        raise ValueError(f"split halves differ in shape: {plus.shape} vs {minus.shape}")
    if plus.config.g0 != minus.config.g0:
        raise ValueError("split halves use different unit conductances")
    return _normalized(plus, "A+"), _normalized(minus, "A-"), plus.config.g0


def _tia_rows(node_g, g_f, oa: OAParams):
    """Per-row diagonal of ``J`` and input gain for a TIA with node conductance ``node_g``.

    The inverting node is ``v- = (I_in + g_f v) / node_g`` where ``I_in``
    is the array current; ``dv/dt = w0(-L0 v- - v)``.
    """
    w0, l0 = oa.omega0, oa.l0
    diag = -w0 * (1.0 + l0 * g_f / node_g)
    gain = -w0 * l0 / node_g
    return diag, gain


# --------------------------------------------------------------------------
# Matrix-vector multiplication
# --------------------------------------------------------------------------


def build_mvm(gm: ConductanceMatrix, x_in, tia: TIAConfig, oa: OAParams = OAParams()) -> CircuitSystem:
    """One TIA per row collecting ``sum_j g_ij x_j``.

    ``x_in`` are the voltages actually applied to the columns; the output
    settles near ``-G x_in / g_f``, so pass ``-x`` to read ``+A x``.
    Row ``i`` settles with time constant ``(1 + sum_j g_ij/g_f) / f_gbwp``.
    """
    g = np.asarray(gm.g, dtype=float)
    n, m = g.shape
    x = as_vector(x_in, m, "x_in")
    node = tia.g_f + g.sum(axis=1)
    diag, gain = _tia_rows(node, tia.g_f, oa)
    return CircuitSystem(
        topology="mvm",
        j=np.diag(diag),
        drive=gain * (g @ x),
        sat_mask=np.zeros(n, dtype=bool),
        output_indices=tuple(range(n)),
        v_sat=oa.v_sat,
        f_gbwp=oa.f_gbwp,
        meta={"g_f": tia.g_f, "g0": gm.config.g0, "x_in": x.tolist(),
              "output_gain": gm.config.g0 / tia.g_f, "oa": _oa_meta(oa)},
    )


def mvm_error_bound(a, x, cfg: DeviceConfig, tia: TIAConfig, oa: OAParams = OAParams(),
                    quantized: bool = True, programmed: bool = True) -> float:
    """Worst-case relative error of the normalized MVM output against ``A x``.

    Each nonzero entry is off by at most half a level step after
    quantization, then by ``verify_window`` of its programmed target:

        e_ij = q/2 + w (a_ij g0 + q/2)      (in siemens, divided by g0)

    The TIA divides the ideal output by ``1 + node_i / (g_f L0)``, which
    adds ``node_i / (g_f L0)`` of the row's magnitude. The bound is
    ``|| sum_j e_ij |x_j| + eps_i (|A| + e)|x| ||_2 / ||A x||_2``.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    nz = a != 0
    half_q = cfg.quantization_bound / cfg.g0 if quantized else 0.0
    e = np.where(nz, half_q, 0.0)
    if programmed:
        e = e + np.where(nz, cfg.verify_window * (np.abs(a) + half_q), 0.0)
    node = tia.g_f + cfg.g0 * (np.abs(a) + e).sum(axis=1)
    eps = node / (tia.g_f * oa.l0)
    ax = np.abs(x)
    per_row = e @ ax + eps * ((np.abs(a) + e) @ ax)
    return float(np.linalg.norm(per_row) / np.linalg.norm(a @ x))


def build_mvm_split_col(split: SplitPair, x_in, tia: TIAConfig, oa: OAParams = OAParams()) -> CircuitSystem:
    """Column-wise split: ``A+`` columns see ``-x``, ``A-`` columns see ``+x``.

    Output settles near ``+(A+ - A-) x * g0 / g_f``.
    """
    a_p, a_m, g0 = _split_arrays(split)
    n, m = a_p.shape
    x = as_vector(x_in, m, "x_in")
    current = g0 * (a_p @ (-x) + a_m @ x)
    node = tia.g_f + g0 * (a_p.sum(axis=1) + a_m.sum(axis=1))
    diag, gain = _tia_rows(node, tia.g_f, oa)
    return CircuitSystem(
        topology="mvm_split_col",
        j=np.diag(diag),
        drive=gain * current,
        sat_mask=np.zeros(n, dtype=bool),
        output_indices=tuple(range(n)),
        v_sat=oa.v_sat,
        f_gbwp=oa.f_gbwp,
        meta={"g_f": tia.g_f, "g0": g0, "x": x.tolist(),
              "output_gain": g0 / tia.g_f, "oa": _oa_meta(oa)},
    )


def build_mvm_split_row(split: SplitPair, x_in, oa: OAParams = OAParams(), tia: TIAConfig = None) -> CircuitSystem:
    """Row-wise split: paired rows feed one differential readout.

    ``x`` is applied uninverted. The readout is lumped into a single
    differential transimpedance stage whose summing node sees both rows
    of the pair and the feedback conductance, so its loop gain and
    bandwidth match the column-split TIA. Output settles near
    ``(I+ - I-) / g_f``. ``tia`` defaults to ``g_f = g0``.
    """
    a_p, a_m, g0 = _split_arrays(split)
    n, m = a_p.shape
    x = as_vector(x_in, m, "x_in")
    g_f = tia.g_f if tia is not None else g0
    diff_current = g0 * (a_p @ x - a_m @ x)
    node = g_f + g0 * (a_p.sum(axis=1) + a_m.sum(axis=1))
    diag, gain = _tia_rows(node, g_f, oa)
    return CircuitSystem(
        topology="mvm_split_row",
        j=np.diag(diag),
        drive=-gain * diff_current,
        sat_mask=np.zeros(n, dtype=bool),
        output_indices=tuple(range(n)),
        v_sat=oa.v_sat,
        f_gbwp=oa.f_gbwp,
        meta={"g_f": g_f, "g0": g0, "x": x.tolist(),
              "output_gain": g0 / g_f, "oa": _oa_meta(oa)},
    )


# --------------------------------------------------------------------------
# Inversion
# --------------------------------------------------------------------------


def build_inversion(gm: ConductanceMatrix, y_in, oa: OAParams = OAParams(), load=None) -> CircuitSystem:
    """Global-feedback solver of ``A x = y``.

    ``dx/dt = w0 (L0 U^-1 (y - A x) - x)`` with ``U = diag(load/g0 + row sums)``.
    ``load`` is the load conductance in siemens, ``g0`` when omitted.
    Stability is not checked here; non-PD arrays build unstable systems.
    """
    a = _normalized(gm)
    n, m = a.shape
    if n != m:
        raise ValueError(f"inversion needs a square array, got {a.shape}")
    y = as_vector(y_in, n, "y_in")
    g0 = gm.config.g0
    load_g = g0 if load is None else float(load)
    u = np.diag(build_u(a, load_g / g0))
    w0, l0 = oa.omega0, oa.l0
    j = -w0 * (l0 * a / u[:, None] + np.eye(n))
    return CircuitSystem(
        topology="inversion",
        j=j,
        drive=w0 * l0 * y / u,
        sat_mask=np.zeros(n, dtype=bool),
        output_indices=tuple(range(n)),
        v_sat=oa.v_sat,
        f_gbwp=oa.f_gbwp,
        meta={"a": a.tolist(), "u": u.tolist(), "y": y.tolist(), "g0": g0,
              "load": load_g, "oa": _oa_meta(oa)},
    )


def build_inversion_split(split: SplitPair, y_in, oa: OAParams = OAParams(),
                          inverter_oa: OAParams = None, load=None) -> CircuitSystem:
    """Inversion of a signed matrix using analog inverters.

    States are the row-amplifier outputs ``x`` followed by inverter
    outputs ``w`` (ideally ``-x``). ``A+`` columns are driven by ``x`` and
    ``A-`` columns by ``w``. The unity-gain inverter with equal resistors
    has feedback factor 1/2, hence the ``f_gbwp_inv / 2`` lag.
    """
    inverter_oa = inverter_oa or oa
    a_p, a_m, g0 = _split_arrays(split)
    n, m = a_p.shape
    if n != m:
        raise ValueError(f"inversion needs square arrays, got {a_p.shape}")
    y = as_vector(y_in, n, "y_in")
    load_g = g0 if load is None else float(load)
    u = np.diag(build_u(a_p + a_m, load_g / g0))
    w0, l0 = oa.omega0, oa.l0
    w_inv = inverter_oa.f_gbwp / 2.0
    eye = np.eye(n)
    j = np.block([
        [-w0 * (l0 * a_p / u[:, None] + eye), -w0 * l0 * a_m / u[:, None]],
        [-w_inv * eye, -w_inv * eye],
    ])
    drive = np.concatenate([w0 * l0 * y / u, np.zeros(n)])
    return CircuitSystem(
        topology="inversion_split",
        j=j,
        drive=drive,
        sat_mask=np.zeros(2 * n, dtype=bool),
        output_indices=tuple(range(n)),
        v_sat=oa.v_sat,
        f_gbwp=max(oa.f_gbwp, inverter_oa.f_gbwp),
        meta={"a_plus": a_p.tolist(), "a_minus": a_m.tolist(), "u": u.tolist(),
              "y": y.tolist(), "g0": g0, "load": load_g,
              "oa": _oa_meta(oa), "inverter_oa": _oa_meta(inverter_oa)},
    )


# --------------------------------------------------------------------------
# Pseudoinverse
# --------------------------------------------------------------------------


def _closed_loop_lag(node_g, c, oa: OAParams):
    """Closed-loop rate of a TIA with feedback ``c`` and node conductance ``node_g``."""
    return oa.omega0 * (1.0 + oa.l0 * c / node_g)


def build_pinv_left(gm: ConductanceMatrix, y_in, tia: TIAConfig, oa1: OAParams = OAParams(),
                    oa2: OAParams = None) -> CircuitSystem:
    """Least-squares solver for a tall array (rows >= cols).

    TIAs (states ``v``) hold ``(y - A x) g0 / c`` behind a first-order
    closed-loop lag; the second-stage amplifiers (states ``x``) integrate
    the current gathered by the transposed array, normalized by the
    column-node conductance. Steady state needs ``A^T v = 0``, i.e. the
    normal equations. ``y_in`` is injected as the current ``g0 * y_in``.
    """
    oa2 = oa2 or oa1
    a = _normalized(gm)
    n, m = a.shape
    if n < m:
        raise ValueError(f"left inverse needs rows >= cols, got {a.shape}")
    y = as_vector(y_in, n, "y_in")
    g0, c = gm.config.g0, tia.g_f
    col = a.sum(axis=0)
    if np.any(col == 0):
        raise ValueError(f"array column {int(np.argmin(col))} is empty; A is rank deficient")
    rate = _closed_loop_lag(c + g0 * a.sum(axis=1), c, oa1)
    k = g0 / c
    j = np.block([
        [-np.diag(rate), -(rate * k)[:, None] * a],
        [oa2.f_gbwp * a.T / col[:, None], np.zeros((m, m))],
    ])
    drive = np.concatenate([rate * k * y, np.zeros(m)])
    return CircuitSystem(
        topology="pinv_left",
        j=j,
        drive=drive,
        sat_mask=np.zeros(n + m, dtype=bool),
        output_indices=tuple(range(n, n + m)),
        v_sat=oa1.v_sat,
        f_gbwp=max(oa1.f_gbwp, oa2.f_gbwp),
        meta={"a": a.tolist(), "y": y.tolist(), "g0": g0, "c": c,
              "oa1": _oa_meta(oa1), "oa2": _oa_meta(oa2)},
    )


def build_pinv_right(gm_t: ConductanceMatrix, y_in, tia: TIAConfig, oa1: OAParams = OAParams(),
                     oa2: OAParams = None) -> CircuitSystem:
    """Minimum-norm solver for a broad system; the arrays store ``A^T``.

    ``gm_t`` is n x m (n >= m) holding ``A^T`` for the m x n matrix ``A``.
    TIAs (states ``u``, read out as the solution) hold ``A^T w g0 / c``;
    the integrators (states ``w``) accumulate ``y - A u``. Steady state:
    ``A A^T w = y c / g0`` and ``u = A^T (A A^T)^-1 y``.
    """
    oa2 = oa2 or oa1
    at = _normalized(gm_t)
    n, m = at.shape
    if n < m:
        raise ValueError(f"right inverse array must store A^T with rows >= cols, got {at.shape}")
    y = as_vector(y_in, m, "y_in")
    g0, c = gm_t.config.g0, tia.g_f
    col = at.sum(axis=0)
    if np.any(col == 0):
        raise ValueError(f"array column {int(np.argmin(col))} is empty; A is rank deficient")
    rate = _closed_loop_lag(c + g0 * at.sum(axis=1), c, oa1)
    k = g0 / c
    j = np.block([
        [-np.diag(rate), (rate * k)[:, None] * at],
        [-oa2.f_gbwp * at.T / col[:, None], np.zeros((m, m))],
    ])
    drive = np.concatenate([np.zeros(n), oa2.f_gbwp * y / col])
    return CircuitSystem(
        topology="pinv_right",
        j=j,
        drive=drive,
        sat_mask=np.zeros(n + m, dtype=bool),
        output_indices=tuple(range(n)),
        v_sat=oa1.v_sat,
        f_gbwp=max(oa1.f_gbwp, oa2.f_gbwp),
        meta={"a_t": at.tolist(), "y": y.tolist(), "g0": g0, "c": c,
              "oa1": _oa_meta(oa1), "oa2": _oa_meta(oa2)},
    )


# --------------------------------------------------------------------------
# Eigenvector
# --------------------------------------------------------------------------


def build_eigenvector(gm: ConductanceMatrix, lambda_mapped: float, sign: str = "positive",
                      oa: OAParams = OAParams(), inverter_oa: OAParams = None) -> CircuitSystem:
    """Self-sustained positive-feedback loop for a dominant eigenvector.

    ``lambda_mapped`` (units of g0) is the TIA feedback conductance. With
    ``sign="positive"`` the TIAs (states ``u``) are followed by unity-gain
    inverters (states ``x``, clamped at the rails) and the loop grows the
    eigenvector of the largest eigenvalue when ``lambda_mapped`` sits
    slightly below it. With ``sign="negative"`` the inverters are removed,
    the clamped TIA outputs feed the columns directly, and the loop grows
    the eigenvector of the most negative eigenvalue whose magnitude
    exceeds ``lambda_mapped``. There is no drive; start from a nonzero state.
    """
    if lambda_mapped <= 0:
        raise ValueError("lambda_mapped must be positive (map |lambda| for negative eigenvalues)")
    if sign not in ("positive", "negative"):
        raise ValueError("sign must be 'positive' or 'negative'")
    a = _normalized(gm)
    n, m = a.shape
    if n != m:
        raise ValueError(f"eigenvector circuit needs a square array, got {a.shape}")
    g0 = gm.config.g0
    lam = float(lambda_mapped)
    node = g0 * (a.sum(axis=1) + lam)
    diag, gain = _tia_rows(node, lam * g0, oa)
    coupling = (gain * g0)[:, None] * a
    meta = {"a": a.tolist(), "lambda_mapped": lam, "sign": sign, "g0": g0, "oa": _oa_meta(oa)}
    if sign == "negative":
        return CircuitSystem(
            topology="eigenvector",
            j=np.diag(diag) + coupling,
            drive=np.zeros(n),
            sat_mask=np.ones(n, dtype=bool),
            output_indices=tuple(range(n)),
            v_sat=oa.v_sat,
            f_gbwp=oa.f_gbwp,
            meta=meta,
        )
    inverter_oa = inverter_oa or oa
    w_inv = inverter_oa.f_gbwp / 2.0
    eye = np.eye(n)
    j = np.block([
        [np.diag(diag), coupling],
        [-w_inv * eye, -w_inv * eye],
    ])
    meta["inverter_oa"] = _oa_meta(inverter_oa)
    return CircuitSystem(
        topology="eigenvector",
        j=j,
        drive=np.zeros(2 * n),
        sat_mask=np.concatenate([np.zeros(n, dtype=bool), np.ones(n, dtype=bool)]),
        output_indices=tuple(range(n, 2 * n)),
        v_sat=min(oa.v_sat, inverter_oa.v_sat),
        f_gbwp=max(oa.f_gbwp, inverter_oa.f_gbwp),
        meta=meta,
    )
