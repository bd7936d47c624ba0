"""Thin-regenerator preparation of the survivor-renormalized (Hardy) pair state."""

from __future__ import annotations

import cmath
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .entangled import PairState
from .meson import Basis, MesonParams, complex_to_json, parse_complex

# c * tau_S in cm, from tau_S = 0.8953e-10 s
C_TAU_S_CM = 2.99792458e10 * 0.8953e-10
HBAR_C_MEV_CM = 1.973269804e-11

THIN_LIMIT = 0.1  # crossing time must stay below this many tau_S
THIN_WARN = 0.01


class ThinRegeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class RegeneratorSpec:
    """Homogeneous slab. Lengths in one unit (cm by default), momenta as 1/length.

    ``c_tau_s`` is c*tau_S in that same length unit; it converts the crossing
    time d*m_K/p_K into tau_S units.
    """

    f: complex
    fbar: complex
    nu: float
    d: float
    p_K: float
    m_K: float
    c_tau_s: float = C_TAU_S_CM

    def __post_init__(self):
        object.__setattr__(self, "f", complex(self.f))
        object.__setattr__(self, "fbar", complex(self.fbar))
        if self.d < 0 or self.nu < 0:
            raise ValueError(f"thickness and density must be >= 0, got d={self.d}, nu={self.nu}")
        if self.p_K <= 0 or self.m_K <= 0 or self.c_tau_s <= 0:
            raise ValueError("p_K, m_K and c_tau_s must be positive")

    @property
    def crossing_time(self) -> float:
        """Proper time spent inside the slab, in tau_S units."""
        return self.d * self.m_K / self.p_K / self.c_tau_s

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RegeneratorSpec":
        data = dict(data)
        for key in ("f", "fbar"):
            data[key] = parse_complex(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "RegeneratorSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "f": complex_to_json(self.f),
            "fbar": complex_to_json(self.fbar),
            "nu": self.nu,
            "d": self.d,
            "p_K": self.p_K,
            "m_K": self.m_K,
            "c_tau_s": self.c_tau_s,
        }


def momentum_to_inverse_cm(p_mev: float) -> float:
    """p [MeV/c] -> p/hbar [1/cm]."""
    return p_mev / HBAR_C_MEV_CM


def regeneration_parameter(spec: RegeneratorSpec) -> complex:
    """r = i pi nu (f - fbar) d / p_K for a slab thin on the tau_S scale."""
    dt = spec.crossing_time
    if dt >= THIN_LIMIT:
        raise ThinRegeneratorError(
            f"crossing time {dt:.4g} tau_S violates the thin-slab limit (< {THIN_LIMIT} tau_S)"
        )
    if dt >= THIN_WARN:
        warnings.warn(f"regenerator crossing time {dt:.3g} tau_S is not << tau_S", stacklevel=2)
    return 1j * math.pi * spec.nu * (spec.f - spec.fbar) * spec.d / spec.p_K


def effective_R(r: complex, T: float, p: MesonParams) -> complex:
    """R = -r exp(-i (dm - i dGamma/2) T) after free flight up to T."""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    dm = p.require_delta_m()
    return -r * cmath.exp(-1j * (dm - 0.5j * p.delta_gamma) * T)


def hardy_state(R: complex) -> PairState:
    """Survivor-normalized state (|KS KL> - |KL KS> + R |KL KL>)/sqrt(2+|R|^2)."""
    R = complex(R)
    coeffs = np.array([[0.0, 1.0], [-1.0, R]], dtype=complex) / math.sqrt(2.0 + abs(R) ** 2)
    return PairState(Basis.LIFETIME, Basis.LIFETIME, coeffs, 0j, renormalized=True)


def min_separation_time(delta_tau: float, beta: float) -> float:
    """Smallest T keeping the two lifetime windows space-like separated."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if delta_tau <= 0:
        raise ValueError(f"delta_tau must be positive, got {delta_tau}")
    return (1.0 / beta - 1.0) * delta_tau / 2.0


@dataclass(frozen=True, eq=False)
class HardyPrep:
    R: complex
    T: float
    state: PairState
    phase_mismatch: float  # arg(R) - pi, wrapped to (-pi, pi]


def prepare_hardy(r: complex, p: MesonParams) -> HardyPrep:
    """Pick T so that |R(T)| = 1 and report how far arg R(T) is from pi.

    Needs |r| <= 1 since |R| only grows with T.
    """
    r = complex(r)
    if r == 0:
        raise ValueError("r = 0 cannot be brought to |R| = 1")
    growth = -p.delta_gamma / 2.0
    if growth <= 0:
        raise ValueError("|R(T)| is constant when Gamma_S == Gamma_L")
    if abs(r) > 1.0:
        raise ValueError(f"|r| = {abs(r):.4g} > 1: |R| >= |r| for every T >= 0")
    T = math.log(1.0 / abs(r)) / growth
    R = effective_R(r, T, p)
    mismatch = cmath.phase(R) - math.pi
    mismatch = (mismatch + math.pi) % (2 * math.pi) - math.pi
    if mismatch == -math.pi:
        mismatch = math.pi
    return HardyPrep(R, T, hardy_state(R), mismatch)
