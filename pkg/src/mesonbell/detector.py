"""Detection model for active strangeness / lifetime measurements.

Each measurement is a three-outcome POVM acting on one member of the pair,
written in the (KS, KL) basis with CP violation neglected:

* strangeness:  E(K0) = eta |K0><K0|,  E(K0bar) = eta_bar |K0bar><K0bar|,
  E(U) = 1 - E(K0) - E(K0bar)
* lifetime:     E(KS) = eta_tau M,  E(KL) = eta_tau (1 - M),  E(U) = (1 - eta_tau) 1

``M`` is the "tagged as KS" effect. Its diagonal holds p_S and 1 - p_L; under
the window-plus-channel scheme it also carries the KS/KL interference of the
common pi pi final state inside the KS window. A decay is first classified,
then kept with probability eta_tau.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Any, Mapping

import numpy as np

from .entangled import PairState
from .meson import Basis, MesonParams, Species
from .regen import hardy_state

DEFAULT_WINDOW = 4.8  # tau_S, time-only identification window
DEFAULT_CHANNEL_WINDOW = 5.82  # tau_S, pi pi assignment window


class Scheme(str, Enum):
    WINDOW = "window"
    CHANNEL = "channel"  # decay time plus decay channel
    IDEAL = "ideal"


class Setting(str, Enum):
    STRANGENESS = "S"
    LIFETIME = "L"


OUTCOMES: dict[Setting, tuple[str, str, str]] = {
    Setting.STRANGENESS: ("K0", "K0bar", "U"),
    Setting.LIFETIME: ("KS", "KL", "U"),
}


class IntegrationError(RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(f"{message} (last estimate {estimate:.6e})")
        self.estimate = estimate


def ident_probs_window(delta_tau: float, p: MesonParams) -> tuple[float, float]:
    """Correct-tag probabilities when only the decay time is used."""
    if delta_tau <= 0:
        raise ValueError(f"delta_tau must be positive, got {delta_tau}")
    return 1.0 - math.exp(-p.gamma_S * delta_tau), math.exp(-p.gamma_L * delta_tau)


def channel_crossover(p: MesonParams) -> float:
    """Time after which a surviving KL is likelier than a KS to give pi pi."""
    br = p.br
    if br.kl_pipi <= 0:
        return math.inf
    return math.log(br.ks_pipi / br.kl_pipi) / (p.gamma_S - p.gamma_L)


def ident_probs_channel(p: MesonParams, window: float = DEFAULT_CHANNEL_WINDOW) -> tuple[float, float]:
    """Correct-tag probabilities when pi pi inside ``window`` tags KS, all else KL.

    Semileptonic and 3 pi decays are always assigned to KL.
    """
    br = p.br
    p_s = br.ks_pipi * (1.0 - math.exp(-p.gamma_S * window))
    p_l = 1.0 - br.kl_pipi * (1.0 - math.exp(-p.gamma_L * window))
    return p_s, p_l


def pipi_interference(p: MesonParams, window: float) -> complex:
    """Off-diagonal <KS|M|KL> of the pi pi-in-window effect.

    Decay amplitudes to pi pi are taken real and positive:
    a_S^2 = Gamma_S BR(KS->pipi), a_L^2 = Gamma_L BR(KL->pipi).
    """
    z = p.gamma_mean + 1j * p.require_delta_m()
    amp = math.sqrt(p.gamma_S * p.br.ks_pipi * p.gamma_L * p.br.kl_pipi)
    return complex(amp * (1.0 - np.exp(-z * window)) / z)


@dataclass(frozen=True)
class EfficiencyModel:
    eta: float
    eta_bar: float
    eta_tau: float = 1.0
    p_S: float = 1.0
    p_L: float = 1.0
    scheme: Scheme = Scheme.IDEAL
    window: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        for f in ("eta", "eta_bar", "eta_tau", "p_S", "p_L"):
            v = getattr(self, f)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f}={v} outside [0, 1]")
        if self.scheme is Scheme.IDEAL and not (self.p_S == self.p_L == self.eta_tau == 1.0):
            raise ValueError("ideal scheme requires p_S = p_L = eta_tau = 1")

    @classmethod
    def ideal(cls, eta: float, eta_bar: float) -> "EfficiencyModel":
        return cls(eta, eta_bar, 1.0, 1.0, 1.0, Scheme.IDEAL, None)

    @classmethod
    def build(
        cls,
        scheme: Scheme | str,
        eta: float,
        eta_bar: float,
        eta_tau: float = 1.0,
        p: MesonParams | None = None,
        window: float | None = None,
    ) -> "EfficiencyModel":
        scheme = Scheme(scheme)
        if scheme is Scheme.IDEAL:
            if eta_tau != 1.0:
                raise ValueError("ideal scheme requires eta_tau = 1")
            return cls.ideal(eta, eta_bar)
        p = MesonParams.defaults() if p is None else p
        if p.species is not Species.KAON:
            raise ValueError("lifetime identification is only modelled for kaons")
        if scheme is Scheme.WINDOW:
            window = DEFAULT_WINDOW if window is None else window
            p_s, p_l = ident_probs_window(window, p)
        else:
            window = DEFAULT_CHANNEL_WINDOW if window is None else window
            p_s, p_l = ident_probs_channel(p, window)
        return cls(eta, eta_bar, eta_tau, p_s, p_l, scheme, window)

    def with_efficiencies(self, eta=None, eta_bar=None, eta_tau=None) -> "EfficiencyModel":
        return replace(
            self,
            eta=self.eta if eta is None else eta,
            eta_bar=self.eta_bar if eta_bar is None else eta_bar,
            eta_tau=self.eta_tau if eta_tau is None else eta_tau,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], p: MesonParams | None = None) -> "EfficiencyModel":
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown EfficiencyModel keys: {sorted(unknown)}")
        if "p_S" in data or "p_L" in data:
            return cls(**data)
        return cls.build(
            data.get("scheme", Scheme.CHANNEL),
            float(data["eta"]),
            float(data["eta_bar"]),
            float(data.get("eta_tau", 1.0)),
            p,
            data.get("window"),
        )


def lifetime_effect(eff: EfficiencyModel, p: MesonParams) -> np.ndarray:
    """The KS-tag effect M in the (KS, KL) basis, before eta_tau."""
    m = np.diag([eff.p_S, 1.0 - eff.p_L]).astype(complex)
    if eff.scheme is Scheme.CHANNEL and eff.window is not None and eff.window > 0:
        x = pipi_interference(p, eff.window)
        m[0, 1] = x
        m[1, 0] = x.conjugate()
    for name, op in (("M", m), ("1 - M", np.eye(2) - m)):
        if np.linalg.eigvalsh(op).min() < -1e-12:
            raise ValueError(f"lifetime effect {name} is not positive; p_S/p_L inconsistent with channel data")
    return m


_K0 = np.array([1.0, 1.0]) / math.sqrt(2.0)
_K0BAR = np.array([1.0, -1.0]) / math.sqrt(2.0)


def measurement_effects(setting: Setting | str, eff: EfficiencyModel, p: MesonParams) -> list[np.ndarray]:
    """The three POVM elements, ordered as :data:`OUTCOMES`.

    eta applies to K0 and eta_bar to K0bar detections on either side.
    """
    setting = Setting(setting)
    if setting is Setting.STRANGENESS:
        e0 = eff.eta * np.outer(_K0, _K0).astype(complex)
        e1 = eff.eta_bar * np.outer(_K0BAR, _K0BAR).astype(complex)
        return [e0, e1, np.eye(2) - e0 - e1]
    m = lifetime_effect(eff, p)
    return [eff.eta_tau * m, eff.eta_tau * (np.eye(2) - m), (1.0 - eff.eta_tau) * np.eye(2, dtype=complex)]


def joint_outcome_matrix(
    state: PairState,
    eff: EfficiencyModel,
    p: MesonParams,
    setting_l: Setting | str,
    setting_r: Setting | str,
) -> np.ndarray:
    """3x3 outcome probabilities for one setting pair, rows left, columns right."""
    c = state.to_basis(Basis.LIFETIME, Basis.LIFETIME).coeffs
    el = measurement_effects(setting_l, eff, p)
    er = measurement_effects(setting_r, eff, p)
    out = np.empty((3, 3))
    for a, ea in enumerate(el):
        for b, eb in enumerate(er):
            out[a, b] = np.einsum("ij,ik,jl,kl->", c.conj(), ea, eb, c).real
    return out


@dataclass(frozen=True)
class ProbabilityTable:
    p_k0_kbar0: float
    p_k0_kl: float
    p_kl_kbar0: float
    p_ks_ks: float
    p_k0_ulif: float
    p_ulif_kbar0: float
    p_ks_kbar0: float
    p_k0_ks: float

    def scaled(self, factor: float) -> "ProbabilityTable":
        return ProbabilityTable(**{k: v * factor for k, v in asdict(self).items()})

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


# which setting pair and outcome cell each table entry comes from
TABLE_CELLS: dict[str, tuple[Setting, Setting, str, str]] = {
    "p_k0_kbar0": (Setting.STRANGENESS, Setting.STRANGENESS, "K0", "K0bar"),
    "p_k0_kl": (Setting.STRANGENESS, Setting.LIFETIME, "K0", "KL"),
    "p_kl_kbar0": (Setting.LIFETIME, Setting.STRANGENESS, "KL", "K0bar"),
    "p_ks_ks": (Setting.LIFETIME, Setting.LIFETIME, "KS", "KS"),
    "p_k0_ulif": (Setting.STRANGENESS, Setting.LIFETIME, "K0", "U"),
    "p_ulif_kbar0": (Setting.LIFETIME, Setting.STRANGENESS, "U", "K0bar"),
    "p_ks_kbar0": (Setting.LIFETIME, Setting.STRANGENESS, "KS", "K0bar"),
    "p_k0_ks": (Setting.STRANGENESS, Setting.LIFETIME, "K0", "KS"),
}


def setting_pair_matrices(R: complex, eff: EfficiencyModel, p: MesonParams) -> dict[tuple[Setting, Setting], np.ndarray]:
    state = hardy_state(R)
    return {
        (sl, sr): joint_outcome_matrix(state, eff, p, sl, sr)
        for sl in Setting
        for sr in Setting
    }


def table_from_matrices(mats: Mapping[tuple[Setting, Setting], np.ndarray]) -> ProbabilityTable:
    values = {}
    for name, (sl, sr, ol, orr) in TABLE_CELLS.items():
        values[name] = float(mats[(sl, sr)][OUTCOMES[sl].index(ol), OUTCOMES[sr].index(orr)])
    return ProbabilityTable(**values)


def hardy_table(R: complex, eff: EfficiencyModel, p: MesonParams) -> ProbabilityTable:
    """Observable probabilities for the regenerated state with amplitude R."""
    return table_from_matrices(setting_pair_matrices(R, eff, p))


def pss_closed_form(eff: EfficiencyModel, p: MesonParams) -> float:
    """P(KS, KS) at R = -1 with the KL KL part of the state dropped."""
    et2 = eff.eta_tau**2
    if eff.scheme is Scheme.IDEAL:
        return 0.0
    incoherent = eff.p_S * (1.0 - eff.p_L)
    if eff.scheme is Scheme.WINDOW:
        return 2.0 / 3.0 * et2 * incoherent
    g = p.gamma_mean
    dm = p.require_delta_m()
    w = eff.window
    bracket = 1.0 - 2.0 * math.exp(-w * g) * math.cos(w * dm) + math.exp(-2.0 * w * g)
    coherent = p.br.ks_pipi * p.br.kl_pipi * p.gamma_S * p.gamma_L / (g * g + dm * dm) * bracket
    return 2.0 / 3.0 * et2 * (incoherent - coherent)


def hardy_closed_form(eff: EfficiencyModel, p: MesonParams) -> ProbabilityTable:
    """Hand-derived entries at R = -1 (independent of the POVM machinery)."""
    eta, eta_bar, et = eff.eta, eff.eta_bar, eff.eta_tau
    return ProbabilityTable(
        p_k0_kbar0=eta * eta_bar / 12.0,
        p_k0_kl=eta * et * (1.0 - eff.p_S) / 6.0,
        p_kl_kbar0=eta_bar * et * (1.0 - eff.p_S) / 6.0,
        p_ks_ks=pss_closed_form(eff, p),
        p_k0_ulif=eta * (1.0 - et) / 6.0,
        p_ulif_kbar0=eta_bar * (1.0 - et) / 6.0,
        p_ks_kbar0=eta_bar * et * eff.p_S / 6.0,
        p_k0_ks=eta * et * eff.p_S / 6.0,
    )


def _gauss_legendre_2d(f, a: float, panels: int, order: int) -> float:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, a, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    tl, tr = np.meshgrid(nodes, nodes, indexing="ij")
    return float(weights @ f(tl, tr) @ weights)


def pss_integral_oracle(
    eta_tau: float,
    p: MesonParams,
    window: float = DEFAULT_CHANNEL_WINDOW,
    rtol: float = 1e-6,
    order: int = 8,
    max_panels: int = 1024,
) -> float:
    """P(KS, KS) by integrating the pi pi / pi pi double decay rate over [0, window]^2.

    The amplitude comes from the R = -1 state without its KL KL part;
    |<pipi|T|KS><pipi|T|KL>|^2 = Gamma_S BR(KS->pipi) Gamma_L BR(KL->pipi).
    Panels are doubled until two successive estimates agree to ``rtol``.
    """
    if p.species is not Species.KAON:
        raise ValueError("pss_integral_oracle is defined for kaons only")
    if window <= 0:
        return 0.0
    lam_s, lam_l = p.eigenvalues()
    rate = p.gamma_S * p.br.ks_pipi * p.gamma_L * p.br.kl_pipi

    def integrand(tl, tr):
        amp = np.exp(-1j * lam_s * tl - 1j * lam_l * tr) - np.exp(-1j * lam_l * tl - 1j * lam_s * tr)
        return rate / 3.0 * np.abs(amp) ** 2

    panels = 1
    prev = _gauss_legendre_2d(integrand, window, panels, order)
    while panels < max_panels:
        panels *= 2
        cur = _gauss_legendre_2d(integrand, window, panels, order)
        if abs(cur - prev) <= rtol * abs(cur):
            return eta_tau**2 * cur
        prev = cur
    raise IntegrationError(f"quadrature did not reach rtol={rtol}", eta_tau**2 * prev)
