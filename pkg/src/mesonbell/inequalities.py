"""CHSH, Wigner-type, Eberhard and Clauser-Horne evaluators plus threshold scans."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize
from scipy.optimize import minimize

from .detector import EfficiencyModel, ProbabilityTable, hardy_table
from .entangled import joint_probability
from .meson import MesonParams


class InequalityName(str, Enum):
    CHSH = "CHSH"
    WIGNER_UCHIYAMA = "WignerUchiyama"
    EBERHARD_H = "EberhardH"
    CLAUSER_HORNE_Q = "ClauserHorneQ"


@dataclass(frozen=True)
class InequalityReport:
    name: InequalityName
    value: float
    bound: float
    violated: bool
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        value = self.value
        return {
            "name": self.name.value,
            "value": "inf" if math.isinf(value) else value,
            "bound": self.bound,
            "violated": self.violated,
            "inputs": self.inputs,
        }


# --------------------------------------------------------------------- CHSH


def chsh_correlation(tau_l, tau_r, p: MesonParams):
    """E(tau_l, tau_r) = -exp(-Gamma_mean (tau_l + tau_r)) cos(dm (tau_l - tau_r)).

    Vectorizes over numpy arrays.
    """
    tau_l = np.asarray(tau_l, dtype=float)
    tau_r = np.asarray(tau_r, dtype=float)
    if np.any(tau_l < 0) or np.any(tau_r < 0):
        raise ValueError("proper times must be >= 0")
    dm = p.require_delta_m()
    out = -np.exp(-p.gamma_mean * (tau_l + tau_r)) * np.cos(dm * (tau_l - tau_r))
    return float(out) if out.ndim == 0 else out


def correlation_from_probabilities(tau_l: float, tau_r: float, p: MesonParams) -> float:
    """Same correlation assembled from the four joint flavour probabilities.

    Y = K0bar found, N = K0 found; swapping the labels leaves E unchanged.
    """
    yy = joint_probability("K0bar", tau_l, "K0bar", tau_r, p)
    nn = joint_probability("K0", tau_l, "K0", tau_r, p)
    yn = joint_probability("K0bar", tau_l, "K0", tau_r, p)
    ny = joint_probability("K0", tau_l, "K0bar", tau_r, p)
    return yy + nn - yn - ny


def chsh_value(t1: float, t2: float, t3: float, t4: float, p: MesonParams) -> float:
    """|E(t1,t3) - E(t1,t4) + E(t2,t3) + E(t2,t4)| for left times t1,t2 and right t3,t4."""
    e = lambda a, b: chsh_correlation(a, b, p)  # noqa: E731
    return abs(e(t1, t3) - e(t1, t4) + e(t2, t3) + e(t2, t4))


@dataclass(frozen=True)
class ChshSearchResult:
    max_value: float
    argmax: tuple[float, float, float, float]
    grid_max: float
    grid_step: float
    t_max: float

    @property
    def violated(self) -> bool:
        return self.max_value > 2.0

    def to_dict(self) -> dict:
        return {
            "max_S": self.max_value,
            "argmax_times": list(self.argmax),
            "grid_max_S": self.grid_max,
            "grid_step": self.grid_step,
            "t_max": self.t_max,
            "violation_found": self.violated,
        }


def chsh_search(
    p: MesonParams,
    t_max: float = 10.0,
    step: float = 0.05,
    n_polish: int = 8,
) -> ChshSearchResult:
    """Largest |S| over [0, t_max]^4: exhaustive grid then Nelder-Mead polish.

    For fixed left times (i, j) the right times enter as
    S = (E_i + E_j)[k] + (E_j - E_i)[l], so the inner maximum over (k, l)
    is a pair of independent 1-D extrema; the full 4-D grid costs O(n^3).
    Not a proof of non-violation.
    """
    grid = np.arange(0.0, t_max + 0.5 * step, step)
    n = grid.size
    E = chsh_correlation(grid[:, None], grid[None, :], p)
    best = -1.0
    candidates: list[tuple[float, tuple[int, int, int, int]]] = []
    for i in range(n):
        plus = E[i][None, :] + E  # row j: E_i + E_j over k
        minus = E - E[i][None, :]  # row j: E_j - E_i over l
        hi = plus.max(axis=1) + minus.max(axis=1)
        lo = -(plus.min(axis=1) + minus.min(axis=1))
        vals = np.maximum(hi, lo)
        j = int(np.argmax(vals))
        if vals[j] > best - 1e-9:
            use_hi = hi[j] >= lo[j]
            k = int(np.argmax(plus[j]) if use_hi else np.argmin(plus[j]))
            l_ = int(np.argmax(minus[j]) if use_hi else np.argmin(minus[j]))
            candidates.append((float(vals[j]), (i, j, k, l_)))
            best = max(best, float(vals[j]))
    candidates.sort(key=lambda c: -c[0])
    grid_max = candidates[0][0]
    top = candidates[0]
    best_val, best_x = grid_max, tuple(float(grid[q]) for q in top[1])

    bounds = [(0.0, t_max)] * 4
    objective = lambda x: -chsh_value(*np.clip(x, 0.0, t_max), p)  # noqa: E731
    for val, idx in candidates[:n_polish]:
        x0 = np.array([grid[q] for q in idx])
        res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        if -res.fun > best_val:
            best_val = float(-res.fun)
            best_x = tuple(float(v) for v in np.clip(res.x, 0.0, t_max))
    return ChshSearchResult(best_val, best_x, grid_max, step, t_max)


# ------------------------------------------------------------ Wigner-type


def wigner_probabilities(eps: complex) -> dict[str, float]:
    """The three joint probabilities at tau -> 0 from the creation state, eps kept.

    The flavour label is the right-hand K0bar (equivalently a left K0 value
    through the perfect anticorrelation), which is the reading under which
    the inequality reduces to Re eps <= |eps|^2.
    """
    eps = complex(eps)
    n2 = 1.0 / (2.0 * (1.0 + abs(eps) ** 2))
    # <K0bar|_r phi = |K0>_l / sqrt2 ; <K1|_r phi = |K2>_l / sqrt2
    p_s_flav = 0.5 * n2 * abs(1.0 + eps) ** 2
    p_s_k1 = 0.5 * n2 * 2.0 * abs(eps) ** 2
    p_k1_flav = 0.25
    return {"P(KS,K0bar)": p_s_flav, "P(KS,K1)": p_s_k1, "P(K1,K0bar)": p_k1_flav}


def wigner_uchiyama(eps: complex) -> InequalityReport:
    if not abs(eps) < 1.0:
        raise ValueError(f"|eps| must be < 1, got {abs(eps)}")
    probs = wigner_probabilities(eps)
    lhs = probs["P(KS,K0bar)"]
    rhs = probs["P(KS,K1)"] + probs["P(K1,K0bar)"]
    reduced_lhs, reduced_rhs = eps.real, abs(eps) ** 2
    return InequalityReport(
        InequalityName.WIGNER_UCHIYAMA,
        value=lhs - rhs,
        bound=0.0,
        violated=bool(lhs > rhs),
        inputs={
            "epsilon": [eps.real, eps.imag],
            "probabilities": probs,
            "re_eps": reduced_lhs,
            "abs_eps_sq": reduced_rhs,
            "reduced_violated": bool(reduced_lhs > reduced_rhs),
        },
    )


# ------------------------------------------------------------- Eberhard / CH

H_NUMERATOR = {"p_k0_kbar0": 1.0}
H_DENOMINATOR = {"p_k0_kl": 1.0, "p_ks_ks": 1.0, "p_kl_kbar0": 1.0, "p_k0_ulif": 1.0, "p_ulif_kbar0": 1.0}
Q_NUMERATOR = {"p_ks_kbar0": 1.0, "p_ks_ks": -1.0, "p_k0_kbar0": 1.0, "p_k0_ks": 1.0}
# P(K0,*) + P(*,K0bar)
Q_DENOMINATOR = {
    "p_k0_ks": 1.0, "p_k0_kl": 1.0, "p_k0_ulif": 1.0,
    "p_kl_kbar0": 1.0, "p_ks_kbar0": 1.0, "p_ulif_kbar0": 1.0,
}


def _linear(t: ProbabilityTable, coeffs: dict[str, float]) -> float:
    return sum(c * getattr(t, k) for k, c in coeffs.items())


def eberhard_H(t: ProbabilityTable) -> InequalityReport:
    num = _linear(t, H_NUMERATOR)
    den = _linear(t, H_DENOMINATOR)
    if not (math.isfinite(num) and math.isfinite(den)):
        raise ValueError("table entries must be finite")
    if den == 0.0:
        value = math.inf if num > 0 else math.nan
        violated = num > 0
    else:
        value = num / den
        violated = value > 1.0
    return InequalityReport(InequalityName.EBERHARD_H, value, 1.0, bool(violated), t.as_dict())


def ch_Q(t: ProbabilityTable) -> InequalityReport:
    num = _linear(t, Q_NUMERATOR)
    den = _linear(t, Q_DENOMINATOR)
    if den == 0.0:
        raise ZeroDivisionError("single-side sums P(K0,*) + P(*,K0bar) vanish")
    value = num / den
    return InequalityReport(InequalityName.CLAUSER_HORNE_Q, value, 1.0, bool(value > 1.0), t.as_dict())


# ------------------------------------------------------------- threshold scan

FIG1_ETA_TAUS = (1.0, 0.99, 0.98, 0.97)


class Relation(str, Enum):
    EQUAL = "equal"  # eta_bar = eta
    DOUBLE = "double"  # eta_bar = 2 eta
    GRID = "grid"  # eta_bar as a function of eta on a grid


@dataclass(frozen=True)
class CurvePoint:
    eta_tau: float
    eta: float
    eta_bar: float | None  # None: no crossing inside the unit square


def _h_minus_one(eff: EfficiencyModel, R: complex, p: MesonParams) -> float:
    # H > 1  <=>  numerator - denominator > 0, which also avoids H's poles
    t = hardy_table(R, eff, p)
    return _linear(t, H_NUMERATOR) - _linear(t, H_DENOMINATOR)


def _root(f, lo: float, hi: float, tol: float) -> float | None:
    """Lowest crossing of f from <= 0 to > 0 on [lo, hi], if bracketed."""
    flo, fhi = f(lo), f(hi)
    if flo > 0:
        return lo
    if fhi <= 0:
        return None
    return float(optimize.brentq(f, lo, hi, xtol=tol))


def threshold_on_ray(
    base: EfficiencyModel, eta_tau: float, slope: float, p: MesonParams,
    R: complex = -1, tol: float = 1e-4,
) -> float | None:
    """Smallest eta with H = 1 along eta_bar = slope * eta (both within [0, 1])."""
    eta_max = min(1.0, 1.0 / slope) if slope > 0 else 1.0
    f = lambda x: _h_minus_one(base.with_efficiencies(x, slope * x, eta_tau), R, p)  # noqa: E731
    return _root(f, 0.0, eta_max, tol)


def threshold_at_eta(
    base: EfficiencyModel, eta_tau: float, eta: float, p: MesonParams,
    R: complex = -1, tol: float = 1e-4,
) -> float | None:
    """Smallest eta_bar with H = 1 at fixed eta."""
    f = lambda y: _h_minus_one(base.with_efficiencies(eta, y, eta_tau), R, p)  # noqa: E731
    return _root(f, 0.0, 1.0, tol)


def threshold_scan(
    eta_taus: Iterable[float] = FIG1_ETA_TAUS,
    relation: Relation | str = Relation.GRID,
    resolution: float = 0.005,
    p: MesonParams | None = None,
    base: EfficiencyModel | None = None,
    R: complex = -1,
    tol: float = 1e-4,
) -> list[CurvePoint]:
    """Boundary H = Q = 1 in the (eta, eta_bar) unit square for each eta_tau."""
    relation = Relation(relation)
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    p = MesonParams.defaults() if p is None else p
    base = EfficiencyModel.build("channel", 1.0, 1.0, 1.0, p) if base is None else base
    points: list[CurvePoint] = []
    for et in eta_taus:
        if relation is Relation.GRID:
            for eta in np.arange(resolution, 1.0 + 0.5 * resolution, resolution):
                eta = round(float(eta), 12)
                points.append(CurvePoint(et, eta, threshold_at_eta(base, et, eta, p, R, tol)))
        else:
            slope = 1.0 if relation is Relation.EQUAL else 2.0
            eta = threshold_on_ray(base, et, slope, p, R, tol)
            if eta is None:
                points.append(CurvePoint(et, math.nan, None))
            else:
                points.append(CurvePoint(et, eta, slope * eta))
    return points


def curves_nested(points: Sequence[CurvePoint]) -> bool:
    """True if every lower-eta_tau curve lies strictly above every higher one."""
    by_tau: dict[float, dict[float, float]] = {}
    for pt in points:
        by_tau.setdefault(pt.eta_tau, {})[pt.eta] = math.inf if pt.eta_bar is None else pt.eta_bar
    taus = sorted(by_tau, reverse=True)
    for hi_tau, lo_tau in zip(taus, taus[1:]):
        upper, lower = by_tau[lo_tau], by_tau[hi_tau]
        shared = [e for e in lower if e in upper]
        if not shared:
            return False
        for e in shared:
            a, b = upper[e], lower[e]
            if math.isinf(b):
                if not math.isinf(a):
                    return False
                continue
            if not a > b:
                return False
    return True


def curve_csv(points: Sequence[CurvePoint], precision: int = 6) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["eta_tau", "eta", "eta_bar"])
    for pt in points:
        writer.writerow([
            f"{pt.eta_tau:.{precision}g}",
            "" if math.isnan(pt.eta) else f"{pt.eta:.{precision}g}",
            "" if pt.eta_bar is None else f"{pt.eta_bar:.{precision}g}",
        ])
    return buf.getvalue()
