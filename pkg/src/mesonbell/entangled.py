"""Entangled meson-antimeson pairs.

A pair is a 2x2 coefficient matrix ``c[i, j]`` over (left slot i, right
slot j) of the declared left/right bases, with the slot orderings of
:mod:`mesonbell.meson`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .meson import (
    Basis,
    MesonParams,
    Species,
    basis_matrix,
    parse_tag,
    propagation_factors,
    transform_matrix,
)

_ANTISYM = np.array([[0, 1], [-1, 0]], dtype=complex) / math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class PairState:
    basis_l: Basis
    basis_r: Basis
    coeffs: np.ndarray
    eps: complex = 0j
    renormalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "basis_l", Basis(self.basis_l))
        object.__setattr__(self, "basis_r", Basis(self.basis_r))
        c = np.array(self.coeffs, dtype=complex).reshape(2, 2)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "eps", complex(self.eps))

    def to_basis(self, basis_l: Basis, basis_r: Basis | None = None) -> "PairState":
        basis_r = basis_l if basis_r is None else basis_r
        tl = transform_matrix(self.basis_l, basis_l, self.eps)
        tr = transform_matrix(self.basis_r, basis_r, self.eps)
        return PairState(basis_l, basis_r, tl @ self.coeffs @ tr.T, self.eps, self.renormalized)

    def norm2(self) -> float:
        """Squared norm of the physical vector (Gram-weighted for eps != 0)."""
        gl = basis_matrix(self.basis_l, self.eps)
        gr = basis_matrix(self.basis_r, self.eps)
        v = gl @ self.coeffs @ gr.T
        return float(np.sum(np.abs(v) ** 2))

    def amplitude(self, tag_l: str, tag_r: str) -> complex:
        """Coefficient on ``|tag_l>|tag_r>`` after changing to the tags' bases."""
        bl, il = parse_tag(tag_l)
        br, ir = parse_tag(tag_r)
        return complex(self.to_basis(bl, br).coeffs[il, ir])


def initial_pair(p: MesonParams) -> PairState:
    """The antisymmetric J^PC = 1-- state at creation, strangeness basis."""
    return PairState(Basis.STRANGENESS, Basis.STRANGENESS, _ANTISYM, p.epsilon)


def lifetime_prefactor(eps: complex) -> complex:
    """(1 + |eps|^2) / (1 - eps^2) multiplying the lifetime form at creation."""
    return (1.0 + abs(eps) ** 2) / (1.0 - eps * eps)


def evolve_pair(s: PairState, tau_l: float, tau_r: float, p: MesonParams) -> PairState:
    """Independent free evolution of the two members up to their own proper times."""
    if tau_l < 0 or tau_r < 0:
        raise ValueError(f"proper times must be >= 0, got {tau_l}, {tau_r}")
    life = s.to_basis(Basis.LIFETIME, Basis.LIFETIME)
    fl = propagation_factors(tau_l, p)
    fr = propagation_factors(tau_r, p)
    evolved = PairState(
        Basis.LIFETIME, Basis.LIFETIME, fl[:, None] * life.coeffs * fr[None, :], s.eps, False
    )
    return evolved.to_basis(s.basis_l, s.basis_r)


def pair_amplitude_probability(
    obs_l: str, tau_l: float, obs_r: str, tau_r: float, p: MesonParams
) -> float:
    """Amplitude route: evolve the eps = 0 creation state, then project."""
    state = PairState(Basis.STRANGENESS, Basis.STRANGENESS, _ANTISYM, 0j)
    return abs(evolve_pair(state, tau_l, tau_r, p).amplitude(obs_l, obs_r)) ** 2


def _strangeness_closed_form(same: bool, tau_l: float, tau_r: float, p: MesonParams) -> float:
    d = tau_l - tau_r
    envelope = math.exp(-(p.gamma_L * tau_l + p.gamma_S * tau_r)) + math.exp(
        -(p.gamma_S * tau_l + p.gamma_L * tau_r)
    )
    if d == 0.0:
        visibility = 1.0
    else:
        with np.errstate(over="ignore"):
            visibility = math.cos(p.require_delta_m() * d) / float(
                np.cosh(p.delta_gamma * d / 2.0)
            )
    return 0.125 * envelope * (1.0 - visibility if same else 1.0 + visibility)


def joint_probability(obs_l: str, tau_l: float, obs_r: str, tau_r: float, p: MesonParams) -> float:
    """Joint detection probability with CP violation neglected.

    Flavour x flavour and lifetime x lifetime use the closed forms; mixed
    bases go through :func:`pair_amplitude_probability`.
    """
    if tau_l < 0 or tau_r < 0:
        raise ValueError(f"proper times must be >= 0, got {tau_l}, {tau_r}")
    bl, il = parse_tag(obs_l)
    br, ir = parse_tag(obs_r)
    if bl is Basis.STRANGENESS and br is Basis.STRANGENESS:
        return _strangeness_closed_form(il == ir, tau_l, tau_r, p)
    if bl is Basis.LIFETIME and br is Basis.LIFETIME:
        if il == ir:
            return 0.0
        if il == 1:  # KL left, KS right
            return 0.5 * math.exp(-(p.gamma_L * tau_l + p.gamma_S * tau_r))
        return 0.5 * math.exp(-(p.gamma_S * tau_l + p.gamma_L * tau_r))
    return pair_amplitude_probability(obs_l, tau_l, obs_r, tau_r, p)


def joint_probability_beauty(
    flav_l: str, tau_l: float, flav_r: str, tau_r: float, p: MesonParams
) -> float:
    """Same/opposite beauty probabilities for Gamma_L = Gamma_H = Gamma_B."""
    if p.species is not Species.BMESON:
        raise ValueError(f"joint_probability_beauty needs B-meson parameters, got {p.species.value}")
    if tau_l < 0 or tau_r < 0:
        raise ValueError(f"proper times must be >= 0, got {tau_l}, {tau_r}")
    bl, il = parse_tag(flav_l)
    br, ir = parse_tag(flav_r)
    if bl is not Basis.STRANGENESS or br is not Basis.STRANGENESS:
        raise ValueError(f"flavour tags expected, got {flav_l}, {flav_r}")
    d = tau_l - tau_r
    c = 1.0 if d == 0.0 else math.cos(p.require_delta_m() * d)
    gamma_b = p.gamma_mean
    sign = -1.0 if il == ir else 1.0
    return 0.25 * math.exp(-(tau_l + tau_r) * gamma_b) * (1.0 + sign * c)
