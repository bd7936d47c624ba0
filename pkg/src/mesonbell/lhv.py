"""Kasday-type local hidden-variable model for passive flavour tagging.

Every pair carries (f_l, tau_l, f_r, tau_r) fixed at creation, drawn from
the quantum joint decay density of flavour-specific channels. Each side's
observed outcome is read off its own two fields only, so the model is local
by construction, yet it reproduces every passive-tag statistic.

Joint density for flavours (F_l, F_r) summed over the channels of each
flavour, with g1 = Gamma_S, g2 = Gamma_L and Gm their mean::

    rho = g1 g2 / 8 [exp(-(g2 tl + g1 tr)) + exp(-(g1 tl + g2 tr))
                     -/+ 2 exp(-Gm (tl + tr)) cos(dm (tl - tr))]

(- for equal flavours). For B mesons g1 = g2 = Gamma_B. For kaons this is
the density of the semileptonically tagged subsample, whose partial width
is the same for KS and KL.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .meson import MesonParams, Species

# flavour 0 = particle (K0 / B0), 1 = antiparticle
DEFAULT_CHANNELS: dict[Species, tuple[tuple[tuple[str, float], ...], tuple[tuple[str, float], ...]]] = {
    Species.BMESON: ((("D*-l+nu", 1.0),), (("D*+l-nubar", 1.0),)),
    Species.KAON: ((("pi-l+nu", 1.0),), (("pi+l-nubar", 1.0),)),
}

CONSTRUCTION_NOTE = (
    "CHSH-type combination of E(dt) = (N_same - N_opp)/(N_same + N_opp) over "
    "passive records binned in tau_l - tau_r; the four settings are time offsets "
    "(a1, a2) left and (b1, b2) right with dt = a - b. A stand-in for the B-factory "
    "estimator, not a reproduction of it."
)


@dataclass(frozen=True)
class HiddenRecord:
    f_l: str
    tau_l: float
    f_r: str
    tau_r: float


@dataclass(frozen=True, eq=False)
class RecordBatch:
    """Column storage for many records; channel columns index ``labels``."""

    chan_l: np.ndarray
    tau_l: np.ndarray
    chan_r: np.ndarray
    tau_r: np.ndarray
    labels: tuple[str, ...]
    label_flavor: np.ndarray  # flavour of each label

    def __len__(self) -> int:
        return self.tau_l.size

    def record(self, i: int) -> HiddenRecord:
        return HiddenRecord(
            self.labels[self.chan_l[i]], float(self.tau_l[i]),
            self.labels[self.chan_r[i]], float(self.tau_r[i]),
        )

    def left_flavor(self) -> np.ndarray:
        return self.label_flavor[self.chan_l]

    def right_flavor(self) -> np.ndarray:
        return self.label_flavor[self.chan_r]

    def write_csv(self, path: str | Path, precision: int = 6) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["f_l", "tau_l", "f_r", "tau_r"])
            for cl, tl, cr, tr in zip(self.chan_l, self.tau_l, self.chan_r, self.tau_r):
                w.writerow([self.labels[cl], f"{tl:.{precision}g}", self.labels[cr], f"{tr:.{precision}g}"])


class KasdaySampler:
    """Draws hidden records. Owns its RNG; not safe to share across threads."""

    def __init__(self, p: MesonParams, seed: int | None = None, channels=None):
        p.require_delta_m()
        self.p = p
        self.rng = np.random.default_rng(seed)
        channels = DEFAULT_CHANNELS[p.species] if channels is None else channels
        labels: list[str] = []
        flavors: list[int] = []
        self._offsets: list[int] = []
        self._weights: list[np.ndarray] = []
        for flavor, chans in enumerate(channels):
            if not chans:
                raise ValueError(f"no channels configured for flavour {flavor}")
            self._offsets.append(len(labels))
            w = np.array([float(c[1]) for c in chans])
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError("channel partial widths must be non-negative with a positive sum")
            self._weights.append(w / w.sum())
            for label, _ in chans:
                labels.append(label)
                flavors.append(flavor)
        if len(set(labels)) != len(labels):
            raise ValueError("channel labels must be unique")
        self.labels = tuple(labels)
        self.label_flavor = np.array(flavors, dtype=np.int8)

    def _channels_for(self, flavor: np.ndarray) -> np.ndarray:
        out = np.empty(flavor.size, dtype=np.int16)
        for f in (0, 1):
            mask = flavor == f
            k = int(mask.sum())
            w = self._weights[f]
            pick = self.rng.choice(w.size, size=k, p=w) if w.size > 1 else np.zeros(k, dtype=int)
            out[mask] = self._offsets[f] + pick
        return out

    def sample(self, n: int) -> RecordBatch:
        p, rng = self.p, self.rng
        g1, g2 = p.gamma_S, p.gamma_L
        # flavour-summed density is an equal mixture of (Exp(g2), Exp(g1)) and (Exp(g1), Exp(g2))
        swap = rng.random(n) < 0.5
        a = rng.exponential(1.0 / g1, n)
        b = rng.exponential(1.0 / g2, n)
        tau_l = np.where(swap, a, b)
        tau_r = np.where(swap, b, a)
        d = tau_l - tau_r
        with np.errstate(over="ignore"):
            vis = np.cos(p.delta_m * d) / np.cosh(p.delta_gamma * d / 2.0)
        same = rng.random(n) < 0.5 * (1.0 - vis)
        left = (rng.random(n) < 0.5).astype(np.int8)
        right = np.where(same, left, 1 - left).astype(np.int8)
        return RecordBatch(
            self._channels_for(left), tau_l, self._channels_for(right), tau_r,
            self.labels, self.label_flavor,
        )


def sample_pair(p: MesonParams, seed: int | None = None) -> HiddenRecord:
    return KasdaySampler(p, seed).sample(1).record(0)


# ----------------------------------------------------------- exact densities


def _interval(z: complex, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integral of exp(-z t) over [a, b]."""
    if z == 0:
        return (b - a).astype(complex)
    return (np.exp(-z * a) - np.exp(-z * b)) / z


def _class_terms(p: MesonParams):
    """Density of a flavour class as sum_k coef_k Re[exp(-zl_k tl - zr_k tr)]."""
    g1, g2, gm, dm = p.gamma_S, p.gamma_L, p.gamma_mean, p.require_delta_m()
    k = g1 * g2 / 4.0  # two flavour combinations per class
    direct = [(k, complex(g2), complex(g1)), (k, complex(g1), complex(g2))]
    interference = (2.0 * k, complex(gm, -dm), complex(gm, dm))
    return direct, interference


def class_density(same: bool, tau_l, tau_r, p: MesonParams):
    """rho summed over the two flavour combinations of the class."""
    tau_l, tau_r = np.asarray(tau_l, float), np.asarray(tau_r, float)
    direct, (ki, zl, zr) = _class_terms(p)
    out = sum(c * np.exp(-(a.real) * tau_l - (b.real) * tau_r) for c, a, b in direct)
    inter = ki * np.real(np.exp(-zl * tau_l - zr * tau_r))
    return out - inter if same else out + inter


def class_box_integrals(same: bool, edges_l: np.ndarray, edges_r: np.ndarray, p: MesonParams) -> np.ndarray:
    """Exact integrals of the class density over every rectangle of the grid."""
    direct, (ki, zl, zr) = _class_terms(p)
    al, bl = edges_l[:-1], edges_l[1:]
    ar, br = edges_r[:-1], edges_r[1:]
    out = np.zeros((al.size, ar.size))
    for c, a, b in direct:
        out += c * np.real(np.outer(_interval(a, al, bl), _interval(b, ar, br)))
    inter = ki * np.real(np.outer(_interval(zl, al, bl), _interval(zr, ar, br)))
    return out - inter if same else out + inter


def _band(a: complex, b: complex, d1: float, d2: float) -> complex:
    """Integral of exp(-a tl - b tr) over tl, tr >= 0 with tl - tr in [d1, d2]."""
    s = a + b
    total = 0j
    if d2 > 0:  # tl - tr = d >= 0 contributes exp(-a d)/s
        lo = max(d1, 0.0)
        total += complex(_interval(a, np.array(lo), np.array(d2))) / s
    if d1 < 0:  # d < 0 contributes exp(b d)/s
        hi = min(d2, 0.0)
        total += complex(_interval(-b, np.array(d1), np.array(hi))) / s
    return total


def class_band_integral(same: bool, d1: float, d2: float, p: MesonParams) -> float:
    direct, (ki, zl, zr) = _class_terms(p)
    out = sum(c * _band(a, b, d1, d2).real for c, a, b in direct)
    inter = ki * _band(zl, zr, d1, d2).real
    return out - inter if same else out + inter


def marginal_cdf(t, p: MesonParams):
    """Single-side decay-time CDF of the record distribution."""
    t = np.asarray(t, float)
    return 1.0 - 0.5 * (np.exp(-p.gamma_S * t) + np.exp(-p.gamma_L * t))


# ----------------------------------------------------------------- audit


def poisson_z(observed: np.ndarray, expected: np.ndarray) -> np.ndarray:
    """Signed normal-equivalent deviations from exact Poisson tails."""
    observed = np.asarray(observed, float)
    expected = np.maximum(np.asarray(expected, float), 1e-300)
    upper = stats.poisson.sf(observed - 1, expected)  # P(X >= obs)
    lower = stats.poisson.cdf(observed, expected)  # P(X <= obs)
    z_hi = np.clip(stats.norm.isf(np.maximum(upper, 1e-300)), 0.0, None)
    z_lo = np.clip(stats.norm.isf(np.maximum(lower, 1e-300)), 0.0, None)
    return np.where(observed > expected, z_hi, np.where(observed < expected, -z_lo, 0.0))


def default_settings(p: MesonParams) -> tuple[tuple[float, float], tuple[float, float]]:
    """Left/right time offsets giving phase differences at the textbook CHSH angles."""
    u = 1.0 / p.require_delta_m()
    return (0.0, 0.5 * math.pi * u), (0.25 * math.pi * u, 0.75 * math.pi * u)


@dataclass
class WindowedChsh:
    settings_l: tuple[float, float]
    settings_r: tuple[float, float]
    width: float
    E_lhv: list[float] = field(default_factory=list)
    sigma_E: list[float] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    E_qm: list[float] = field(default_factory=list)

    @staticmethod
    def _combine(e: Sequence[float]) -> float:
        return e[0] - e[1] + e[2] + e[3]

    @property
    def S_lhv(self) -> float:
        return self._combine(self.E_lhv)

    @property
    def S_qm(self) -> float:
        return self._combine(self.E_qm)

    @property
    def sigma_S(self) -> float:
        # setting pairs with the same a - b reuse the same records, so their
        # coefficients add before squaring
        weight: dict[float, list[float]] = {}
        for (a, b), c, s in zip(self._pairs(), (1, -1, 1, 1), self.sigma_E):
            key = round(a - b, 12)
            weight.setdefault(key, [0.0, s])[0] += c
        return math.sqrt(sum((c * s) ** 2 for c, s in weight.values()))

    def _pairs(self):
        return [(a, b) for a in self.settings_l for b in self.settings_r]

    @property
    def agree(self) -> bool:
        return abs(self.S_lhv - self.S_qm) <= 3.0 * self.sigma_S

    def to_dict(self) -> dict:
        return {
            "construction": CONSTRUCTION_NOTE,
            "settings_left": list(self.settings_l),
            "settings_right": list(self.settings_r),
            "width": self.width,
            "E_lhv": self.E_lhv,
            "sigma_E": self.sigma_E,
            "counts": self.counts,
            "E_qm": self.E_qm,
            "S_lhv": self.S_lhv,
            "sigma_S": self.sigma_S,
            "S_qm": self.S_qm,
            "lhv_exceeds_2": abs(self.S_lhv) > 2.0,
            "qm_exceeds_2": abs(self.S_qm) > 2.0,
            "agree_within_3_sigma": self.agree,
        }


def windowed_chsh(batch: RecordBatch, p: MesonParams, settings=None, width: float = 0.2) -> WindowedChsh:
    settings_l, settings_r = default_settings(p) if settings is None else settings
    # outcomes use only each side's own (f, tau)
    fl, fr = batch.left_flavor(), batch.right_flavor()
    d = batch.tau_l - batch.tau_r
    res = WindowedChsh(tuple(settings_l), tuple(settings_r), width)
    for a in settings_l:
        for b in settings_r:
            d1, d2 = a - b - width / 2.0, a - b + width / 2.0
            sel = (d >= d1) & (d < d2)
            n = int(sel.sum())
            same = int((fl[sel] == fr[sel]).sum())
            e = (2.0 * same - n) / n if n else math.nan
            res.E_lhv.append(e)
            res.sigma_E.append(math.sqrt(max(1.0 - e * e, 0.0) / n) if n else math.inf)
            res.counts.append(n)
            i_same = class_band_integral(True, d1, d2, p)
            i_opp = class_band_integral(False, d1, d2, p)
            res.E_qm.append((i_same - i_opp) / (i_same + i_opp))
    return res


@dataclass
class LhvReport:
    n_events: int
    seed: int | None
    species: str
    grid_bins: int
    t_max: float
    max_abs_z: dict[str, float]
    in_grid: int
    equal_time_same_flavor: dict[str, float]
    ks_statistic: float
    ks_pvalue: float
    chsh: WindowedChsh

    @property
    def densities_agree(self) -> bool:
        return max(self.max_abs_z.values()) < 5.0

    @property
    def agreement(self) -> bool:
        return self.densities_agree and self.chsh.agree

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "seed": self.seed,
            "species": self.species,
            "grid_bins": self.grid_bins,
            "t_max": self.t_max,
            "events_in_grid": self.in_grid,
            "max_abs_z": self.max_abs_z,
            "densities_agree": self.densities_agree,
            "equal_time_same_flavor": self.equal_time_same_flavor,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "windowed_chsh": self.chsh.to_dict(),
            "agreement": self.agreement,
        }


def lhv_vs_qm_report(
    n_events: int,
    p: MesonParams,
    seed: int | None = None,
    bins: int = 50,
    t_max: float | None = None,
    settings=None,
    width: float = 0.2,
    batch: RecordBatch | None = None,
) -> LhvReport:
    """Sample hidden records and audit them against the exact densities."""
    if n_events < 10_000:
        raise ValueError(f"n_events must be >= 1e4, got {n_events}")
    if batch is None:
        batch = KasdaySampler(p, seed).sample(n_events)
    if t_max is None:
        t_max = 6.0 / p.gamma_mean if p.species is Species.BMESON else 10.0 / p.gamma_S
    edges = np.linspace(0.0, t_max, bins + 1)
    fl, fr = batch.left_flavor(), batch.right_flavor()
    max_z: dict[str, float] = {}
    diag: dict[str, float] = {}
    in_grid = 0
    for name, same in (("same_flavor", True), ("opposite_flavor", False)):
        mask = (fl == fr) if same else (fl != fr)
        obs, _, _ = np.histogram2d(batch.tau_l[mask], batch.tau_r[mask], bins=[edges, edges])
        exp = n_events * class_box_integrals(same, edges, edges, p)
        z = poisson_z(obs, exp)
        max_z[name] = float(np.abs(z).max())
        in_grid += int(obs.sum())
        if same:
            diag["observed"] = float(np.trace(obs))
            diag["expected"] = float(np.trace(exp))
    ks = stats.kstest(batch.tau_l, lambda t: marginal_cdf(t, p))
    chsh = windowed_chsh(batch, p, settings, width)
    return LhvReport(
        n_events, seed, p.species.value, bins, float(t_max), max_z, in_grid, diag,
        float(ks.statistic), float(ks.pvalue), chsh,
    )
