"""Single neutral-meson parameters, bases and time evolution.

Conventions used everywhere in the package
-------------------------------------------
* Natural units. For kaons Gamma_S = 1 (tau_S = 1); for B mesons Gamma_B = 1.
* Two-component amplitude vectors are ordered

      strangeness : (K0, K0bar)      [beauty for B: (B0, B0bar)]
      lifetime    : (KS, KL)         [B: (BL, BH), light first]
      CP          : (K1, K2)

* A state in basis ``b`` stores *expansion coefficients* ``c`` such that
  ``|psi> = sum_i c_i |b_i>``.  For eps != 0 the lifetime basis is not
  orthogonal, so coefficients and projections differ.
* The mean mass is dropped (global phase); ``m_S = -dm/2``, ``m_L = +dm/2``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class Species(str, Enum):
    KAON = "kaon"
    BMESON = "b"


class Basis(str, Enum):
    STRANGENESS = "strangeness"
    LIFETIME = "lifetime"
    CP = "cp"


# tag -> (basis, slot)
STATE_TAGS: dict[str, tuple[Basis, int]] = {
    "K0": (Basis.STRANGENESS, 0),
    "K0bar": (Basis.STRANGENESS, 1),
    "KS": (Basis.LIFETIME, 0),
    "KL": (Basis.LIFETIME, 1),
    "K1": (Basis.CP, 0),
    "K2": (Basis.CP, 1),
    "B0": (Basis.STRANGENESS, 0),
    "B0bar": (Basis.STRANGENESS, 1),
    "BL": (Basis.LIFETIME, 0),
    "BH": (Basis.LIFETIME, 1),
}

_FLAVOR_CONJUGATE = {"K0": "K0bar", "K0bar": "K0", "B0": "B0bar", "B0bar": "B0"}


def parse_tag(tag: str) -> tuple[Basis, int]:
    try:
        return STATE_TAGS[tag]
    except KeyError:
        raise ValueError(
            f"unknown state tag {tag!r}; expected one of {sorted(STATE_TAGS)}"
        ) from None


def parse_complex(value: Any) -> complex:
    """Accept a number, ``[re, im]``, ``{"re", "im"}`` or ``{"abs", "arg_deg"}``."""
    if isinstance(value, (int, float, complex)):
        return complex(value)
    if isinstance(value, str):
        return complex(value.replace(" ", "").replace("i", "j"))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, Mapping):
        if "re" in value or "im" in value:
            return complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
        if "abs" in value:
            return cmath.rect(float(value["abs"]), math.radians(float(value.get("arg_deg", 0.0))))
    raise ValueError(f"cannot interpret {value!r} as a complex number")


def complex_to_json(z: complex) -> list[float]:
    return [z.real, z.imag]


@dataclass(frozen=True)
class BranchingRatios:
    """Kaon decay fractions used for lifetime tagging."""

    kl_semileptonic: float = 0.6600
    kl_pipi: float = 0.0030
    ks_semileptonic: float = 0.0011
    ks_pipi: float = 0.9989

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"branching ratio {name}={value} outside [0, 1]")


KAON_WIDTH_RATIO = 579.0  # Gamma_S / Gamma_L
KAON_DGAMMA_OVER_DM = 2.1  # |Delta Gamma| / Delta m
KAON_EPS_ABS = 2.284e-3
KAON_BETA = 0.22  # kaons from phi decays


@dataclass(frozen=True)
class MesonParams:
    """Species constants in natural units.

    ``gamma_S``/``gamma_L`` fill the first/second lifetime slot. For B mesons
    that is (B_L, B_H) and ``delta_m`` is m_H - m_L.  ``delta_m`` may be left
    as ``None`` for B mesons; anything that needs it then raises.
    """

    species: Species = Species.KAON
    gamma_S: float = 1.0
    gamma_L: float = 1.0 / KAON_WIDTH_RATIO
    delta_m: float | None = (1.0 - 1.0 / KAON_WIDTH_RATIO) / KAON_DGAMMA_OVER_DM
    epsilon: complex = 0j
    br: BranchingRatios = field(default_factory=BranchingRatios)
    beta: float | None = KAON_BETA

    def __post_init__(self):
        object.__setattr__(self, "species", Species(self.species))
        object.__setattr__(self, "epsilon", complex(self.epsilon))
        if not (self.gamma_S >= self.gamma_L >= 0.0):
            raise ValueError(
                f"need gamma_S >= gamma_L >= 0, got {self.gamma_S}, {self.gamma_L}"
            )
        if self.delta_m is not None and not self.delta_m > 0.0:
            raise ValueError(f"delta_m must be positive, got {self.delta_m}")
        if self.delta_m is None and self.species is Species.KAON:
            raise ValueError("delta_m is required for kaons")
        if not abs(self.epsilon) < 1.0:
            raise ValueError(f"|epsilon| must be < 1, got {abs(self.epsilon)}")
        if self.beta is not None and not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    @classmethod
    def defaults(cls, species: Species | str = Species.KAON, **overrides) -> "MesonParams":
        species = Species(species)
        if species is Species.KAON:
            gamma_s = 1.0
            gamma_l = gamma_s / KAON_WIDTH_RATIO
            dm = (gamma_s - gamma_l) / KAON_DGAMMA_OVER_DM
            # phase convention: arctan(2 dm / |dGamma|); only |eps| is measured input
            eps = cmath.rect(KAON_EPS_ABS, math.atan2(2.0 * dm, gamma_s - gamma_l))
            base = cls(Species.KAON, gamma_s, gamma_l, dm, eps, BranchingRatios(), KAON_BETA)
        else:
            base = cls(Species.BMESON, 1.0, 1.0, None, 0j, BranchingRatios(), None)
        return replace(base, **overrides) if overrides else base

    @property
    def delta_gamma(self) -> float:
        """Gamma_L - Gamma_S (negative for kaons)."""
        return self.gamma_L - self.gamma_S

    @property
    def gamma_mean(self) -> float:
        return 0.5 * (self.gamma_S + self.gamma_L)

    def require_delta_m(self) -> float:
        if self.delta_m is None:
            raise ValueError("delta_m is not set; pass it explicitly for B-meson runs")
        return self.delta_m

    def eigenvalues(self) -> tuple[complex, complex]:
        """Complex eigen-energies lambda = m - i Gamma/2 for the two lifetime states."""
        dm = self.require_delta_m()
        return (-0.5 * dm - 0.5j * self.gamma_S, 0.5 * dm - 0.5j * self.gamma_L)

    def to_dict(self) -> dict:
        return {
            "species": self.species.value,
            "gamma_S": self.gamma_S,
            "gamma_L": self.gamma_L,
            "delta_m": self.delta_m,
            "epsilon": complex_to_json(self.epsilon),
            "br": asdict(self.br),
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MesonParams":
        data = dict(data)
        species = Species(data.pop("species", Species.KAON))
        kwargs: dict[str, Any] = {}
        for key in ("gamma_S", "gamma_L", "delta_m", "beta"):
            if key in data:
                kwargs[key] = None if data[key] is None else float(data[key])
        if "epsilon" in data:
            kwargs["epsilon"] = parse_complex(data["epsilon"])
        if "br" in data:
            kwargs["br"] = BranchingRatios(**data["br"])
        unknown = set(data) - {"gamma_S", "gamma_L", "delta_m", "beta", "epsilon", "br"}
        if unknown:
            raise ValueError(f"unknown MesonParams keys: {sorted(unknown)}")
        return cls.defaults(species, **kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "MesonParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def basis_matrix(basis: Basis, eps: complex = 0j) -> np.ndarray:
    """Columns are the basis vectors written in strangeness coordinates."""
    basis = Basis(basis)
    if basis is Basis.STRANGENESS:
        return np.eye(2, dtype=complex)
    if basis is Basis.CP:
        return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)
    norm = 1.0 / math.sqrt(2.0 * (1.0 + abs(eps) ** 2))
    return norm * np.array([[1 + eps, 1 + eps], [1 - eps, -(1 - eps)]], dtype=complex)


def transform_matrix(source: Basis, target: Basis, eps: complex = 0j) -> np.ndarray:
    """Matrix taking coefficients in ``source`` to coefficients in ``target``."""
    try:
        source, target = Basis(source), Basis(target)
    except ValueError:
        raise ValueError(f"unsupported basis pair: {source!r} -> {target!r}") from None
    if source is target:
        return np.eye(2, dtype=complex)
    return np.linalg.solve(basis_matrix(target, eps), basis_matrix(source, eps))


@dataclass(frozen=True, eq=False)
class SingleState:
    basis: Basis
    amps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        amps = np.asarray(self.amps, dtype=complex).reshape(2)
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @classmethod
    def from_tag(cls, tag: str) -> "SingleState":
        basis, slot = parse_tag(tag)
        amps = np.zeros(2, dtype=complex)
        amps[slot] = 1.0
        return cls(basis, amps)

    def norm2(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)


def change_basis(s: SingleState, target: Basis, eps: complex = 0j) -> SingleState:
    if not abs(eps) < 1.0:
        raise ValueError(f"|eps| must be < 1, got {abs(eps)}")
    return SingleState(target, transform_matrix(s.basis, target, eps) @ s.amps)


def inner_product(a: SingleState, b: SingleState, eps: complex = 0j) -> complex:
    """<a|b> computed in strangeness coordinates (honours non-orthogonality)."""
    va = basis_matrix(a.basis, eps) @ a.amps
    vb = basis_matrix(b.basis, eps) @ b.amps
    return complex(np.vdot(va, vb))


def propagation_factors(tau: float, p: MesonParams) -> np.ndarray:
    if tau < 0:
        raise ValueError(f"proper time must be >= 0, got {tau}")
    lam = np.array(p.eigenvalues())
    return np.exp(-1j * lam * tau)


def propagate(s: SingleState, tau: float, p: MesonParams) -> SingleState:
    """Free evolution in the lifetime basis; the result is not renormalized."""
    if s.basis is not Basis.LIFETIME:
        raise ValueError(f"propagate needs a lifetime-basis state, got {s.basis.value}")
    return SingleState(Basis.LIFETIME, s.amps * propagation_factors(tau, p))


def transition_probability(initial: str, final: str, tau: float, p: MesonParams) -> float:
    """Closed-form single-meson probabilities at eps = 0.

    ``initial`` is a flavour tag; ``final`` a flavour or lifetime tag. The
    antiparticle case follows by swapping K0 <-> K0bar in ``final``.
    """
    if tau < 0:
        raise ValueError(f"proper time must be >= 0, got {tau}")
    ib, islot = parse_tag(initial)
    fb, fslot = parse_tag(final)
    if ib is not Basis.STRANGENESS:
        raise ValueError(f"initial state must be a flavour eigenstate, got {initial}")
    if fb is Basis.CP:
        raise ValueError("CP-basis final states have no closed form here")
    decay_s = math.exp(-p.gamma_S * tau)
    decay_l = math.exp(-p.gamma_L * tau)
    if fb is Basis.LIFETIME:
        return 0.5 * (decay_s if fslot == 0 else decay_l)
    if tau == 0.0:
        visibility = 1.0
    else:
        dm = p.require_delta_m()
        with np.errstate(over="ignore"):
            visibility = math.cos(dm * tau) / float(np.cosh(p.delta_gamma * tau / 2.0))
    sign = 1.0 if fslot == islot else -1.0
    return 0.25 * (decay_s + decay_l) * (1.0 + sign * visibility)


def flavor_conjugate(tag: str) -> str:
    return _FLAVOR_CONJUGATE.get(tag, tag)
