"""Mapping of matrices onto resistive-memory conductances.

A matrix entry ``a`` becomes a conductance ``a * g0``. Devices have a
finite programmable window ``[g_min, g_max]`` with ``levels`` uniformly
spaced states, and programming lands on a target only up to multiplicative
Gaussian noise, which a program-and-verify loop pushes into a relative
error window.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .matrix import SplitPair, as_matrix

PROVENANCES = ("ideal", "quantized", "programmed")


class ConductanceWindowError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceConfig:
    g0: float = 100e-6
    g_min: float = 0.0
    g_max: float = 1e-3
    levels: int = 64
    sigma_prog: float = 0.05
    verify_window: float = 0.01
    max_verify_iters: int = 100

    def __post_init__(self):
        if self.g0 <= 0:
            raise ValueError("g0 must be positive")
        if not 0 <= self.g_min < self.g_max:
            raise ValueError("need 0 <= g_min < g_max")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if self.sigma_prog < 0:
            raise ValueError("sigma_prog must be >= 0")
        if self.verify_window <= 0:
            raise ValueError("verify_window must be > 0")
        if self.max_verify_iters < 1:
            raise ValueError("max_verify_iters must be >= 1")

    @property
    def level_step(self) -> float:
        return (self.g_max - self.g_min) / (self.levels - 1)

    @property
    def quantization_bound(self) -> float:
        """Worst-case absolute error of snapping to the nearest level (siemens)."""
        return self.level_step / 2


@dataclass(frozen=True)
class ConductanceMatrix:
    """Array of device conductances in siemens.

    ``clamp_events`` counts cells whose program/verify loop ran out of
    iterations; ``verify_iterations`` holds the per-cell attempt counts.
    ``source`` keeps the dimensionless matrix of an ideal mapping so that
    reading it back is exact rather than off by a rounding in ``g / g0``.
    """

    g: np.ndarray
    config: DeviceConfig
    provenance: str = "ideal"
    clamp_events: int = 0
    verify_iterations: np.ndarray = field(default=None, repr=False)
    source: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.source is not None and self.provenance != "ideal":
            raise ValueError("only ideal mappings carry a source matrix")
        g = np.array(self.g, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def shape(self):
        return self.g.shape

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg.pop("max_verify_iters")
        return {
            **cfg,
            "provenance": self.provenance,
            "rows": int(self.g.shape[0]),
            "cols": int(self.g.shape[1]),
            "entries": [float(v) for v in self.g.ravel()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ConductanceMatrix":
        cfg = DeviceConfig(
            g0=d["g0"],
            g_min=d["g_min"],
            g_max=d["g_max"],
            levels=d["levels"],
            sigma_prog=d["sigma_prog"],
            verify_window=d["verify_window"],
        )
        g = np.array(d["entries"], dtype=float).reshape(d["rows"], d["cols"])
        return cls(g=g, config=cfg, provenance=d["provenance"])

    @classmethod
    def from_json(cls, text: str) -> "ConductanceMatrix":
        return cls.from_dict(json.loads(text))


def map_matrix(a, cfg: DeviceConfig = DeviceConfig()) -> ConductanceMatrix:
    """Scale a nonnegative matrix by ``g0``.

    Refuses, rather than rescales, matrices that do not fit the device
    window: rescaling changes circuit dynamics and must be explicit.
    """
    m = as_matrix(a)
    if np.any(m < 0):
        i, j = np.argwhere(m < 0)[0]
        raise ValueError(
            f"negative entry a[{i},{j}]={m[i, j]:g}; split the matrix before mapping"
        )
    g = m * cfg.g0
    if np.any(g > cfg.g_max):
        i, j = np.unravel_index(np.argmax(g), g.shape)
        raise ConductanceWindowError(
            f"entry a[{i},{j}]={m[i, j]:g} maps to {g[i, j]:.4g} S > g_max={cfg.g_max:.4g} S; "
            f"max feasible scale is {cfg.g_max / g.max():.6g}"
        )
    low = (g > 0) & (g < cfg.g_min)
    if np.any(low):
        i, j = np.argwhere(low)[0]
        raise ConductanceWindowError(
            f"entry a[{i},{j}]={m[i, j]:g} maps to {g[i, j]:.4g} S < g_min={cfg.g_min:.4g} S"
        )
    src = m.copy()
    src.setflags(write=False)
    return ConductanceMatrix(g=g, config=cfg, provenance="ideal", source=src)


def map_split(split: SplitPair, cfg: DeviceConfig = DeviceConfig()) -> SplitPair:
    return SplitPair(plus=map_matrix(split.plus, cfg), minus=map_matrix(split.minus, cfg))


def quantize(gm: ConductanceMatrix) -> ConductanceMatrix:
    """Snap every nonzero conductance to the nearest programmable level."""
    if gm.provenance != "ideal":
        raise ValueError(f"quantize expects ideal conductances, got {gm.provenance}")
    cfg = gm.config
    idx = np.clip(np.rint((gm.g - cfg.g_min) / cfg.level_step), 0, cfg.levels - 1)
    snapped = cfg.g_min + idx * cfg.level_step
    g = np.where(gm.g != 0, snapped, 0.0)
    return ConductanceMatrix(g=g, config=cfg, provenance="quantized")


def program_with_verify(gm: ConductanceMatrix, seed: int) -> ConductanceMatrix:
    """Program every cell with multiplicative noise until it lands in the verify window.

    Each pending cell draws ``target * (1 + N(0, sigma_prog))`` per attempt.
    Cells still outside ``verify_window * target`` after
    ``max_verify_iters`` attempts are clamped to the nearest window edge
    and counted in ``clamp_events``. Results are limited to the device
    window ``[g_min, g_max]``.
    """
    if gm.provenance not in ("ideal", "quantized"):
        raise ValueError(f"cannot program from provenance {gm.provenance}")
    cfg = gm.config
    rng = np.random.default_rng(seed)
    target = np.asarray(gm.g, dtype=float)
    actual = target.copy()
    iters = np.zeros(target.shape, dtype=int)
    if cfg.sigma_prog == 0:
        return ConductanceMatrix(g=actual, config=cfg, provenance="programmed",
                                 verify_iterations=iters)

    tol = cfg.verify_window * target
    pending = target != 0
    for _ in range(cfg.max_verify_iters):
        if not pending.any():
            break
        draws = target[pending] * (1.0 + cfg.sigma_prog * rng.standard_normal(pending.sum()))
        actual[pending] = draws
        iters[pending] += 1
        pending &= np.abs(actual - target) > tol

    clamps = int(pending.sum())
    if clamps:
        edge = target + np.sign(actual - target) * tol
        actual = np.where(pending, edge, actual)
    nonzero = target != 0
    actual = np.where(nonzero, np.clip(actual, cfg.g_min, cfg.g_max), 0.0)
    return ConductanceMatrix(g=actual, config=cfg, provenance="programmed",
                             clamp_events=clamps, verify_iterations=iters)


def read_matrix(gm: ConductanceMatrix) -> np.ndarray:
    """Dimensionless matrix ``g / g0``; exact for ideal mappings."""
    if gm.source is not None:
        return np.array(gm.source)
    return np.asarray(gm.g, dtype=float) / gm.config.g0
