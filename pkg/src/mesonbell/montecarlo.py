"""Pair-by-pair simulation of the active Hardy test and estimation of H and Q.

Each block of events gets its own PCG64 stream spawned from
``SeedSequence(seed)``, so results do not depend on how blocks are
scheduled over threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .detector import OUTCOMES, TABLE_CELLS, EfficiencyModel, ProbabilityTable, Setting, setting_pair_matrices
from .inequalities import H_DENOMINATOR, H_NUMERATOR, Q_DENOMINATOR, Q_NUMERATOR
from .meson import MesonParams, complex_to_json

SETTINGS = (Setting.STRANGENESS, Setting.LIFETIME)
PAIRS = tuple((sl, sr) for sl in SETTINGS for sr in SETTINGS)
DEFAULT_BLOCK = 1_000_000
SUM_TOL = 1e-9


class Policy(str, Enum):
    RANDOM = "random"
    FIXED = "fixed"


class ConsistencyError(RuntimeError):
    pass


class MissingSettingPairs(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        names = ", ".join(f"({a.value},{b.value})" for a, b in self.missing)
        super().__init__(f"setting pairs absent from the log: {names}")


@dataclass(eq=False)
class EventLog:
    """Settings as indices into SETTINGS, outcomes as indices into OUTCOMES[setting]."""

    setting_l: np.ndarray
    setting_r: np.ndarray
    outcome_l: np.ndarray
    outcome_r: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.setting_l.size

    def pair_index(self) -> np.ndarray:
        return 2 * self.setting_l.astype(np.int64) + self.setting_r

    def counts(self) -> np.ndarray:
        """(4, 3, 3) counts indexed by setting pair, left outcome, right outcome."""
        code = (self.pair_index() * 3 + self.outcome_l) * 3 + self.outcome_r
        return np.bincount(code, minlength=36).reshape(4, 3, 3)

    def labels(self) -> tuple[list[str], list[str], list[str], list[str]]:
        sl = [SETTINGS[i].value for i in self.setting_l]
        sr = [SETTINGS[i].value for i in self.setting_r]
        ol = [OUTCOMES[SETTINGS[s]][o] for s, o in zip(self.setting_l, self.outcome_l)]
        orr = [OUTCOMES[SETTINGS[s]][o] for s, o in zip(self.setting_r, self.outcome_r)]
        return sl, sr, ol, orr


def _line_table() -> list[str]:
    lines = []
    for sl, sr in PAIRS:
        for ol in OUTCOMES[sl]:
            for orr in OUTCOMES[sr]:
                lines.append(f"{sl.value},{sr.value},{ol},{orr}")
    return lines


_LINES = np.array(_line_table())
_CSV_HEADER = "setting_l,setting_r,outcome_l,outcome_r"


def outcome_distributions(R: complex, eff: EfficiencyModel, p: MesonParams) -> np.ndarray:
    """(4, 9) outcome distributions per setting pair, checked and renormalized."""
    mats = setting_pair_matrices(R, eff, p)
    out = np.empty((4, 9))
    for k, pair in enumerate(PAIRS):
        m = mats[pair].ravel()
        total = m.sum()
        if abs(total - 1.0) > SUM_TOL or np.any(m < -SUM_TOL):
            raise ConsistencyError(
                f"outcome probabilities for setting pair ({pair[0].value},{pair[1].value}) "
                f"sum to {total!r}"
            )
        out[k] = np.clip(m, 0.0, None) / total
    return out


def _block(seed_seq: np.random.SeedSequence, m: int, cum: np.ndarray, fixed: tuple[int, int] | None):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    if fixed is None:
        sl = rng.integers(0, 2, m, dtype=np.int8)
        sr = rng.integers(0, 2, m, dtype=np.int8)
    else:
        sl = np.full(m, fixed[0], dtype=np.int8)
        sr = np.full(m, fixed[1], dtype=np.int8)
    u = rng.random(m)
    pair = 2 * sl.astype(np.int64) + sr
    cell = np.zeros(m, dtype=np.int64)
    for j in range(8):
        cell += u >= cum[pair, j]
    return sl, sr, (cell // 3).astype(np.int8), (cell % 3).astype(np.int8)


def generate_events(
    R: complex,
    eff: EfficiencyModel,
    n: int,
    seed: int,
    policy: Policy | str = Policy.RANDOM,
    fixed: tuple[Setting | str, Setting | str] | None = None,
    p: MesonParams | None = None,
    block_size: int = DEFAULT_BLOCK,
    threads: int = 1,
) -> EventLog:
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if block_size <= 0:
        raise ValueError(f"block_size must be positive, got {block_size}")
    policy = Policy(policy)
    p = MesonParams.defaults() if p is None else p
    fixed_idx = None
    if policy is Policy.FIXED:
        if fixed is None:
            raise ValueError("fixed policy needs a (left, right) setting pair")
        fixed_idx = (SETTINGS.index(Setting(fixed[0])), SETTINGS.index(Setting(fixed[1])))
    probs = outcome_distributions(R, eff, p)
    cum = np.cumsum(probs, axis=1)
    sizes = [min(block_size, n - s) for s in range(0, n, block_size)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(lambda a: _block(a[0], a[1], cum, fixed_idx), zip(seeds, sizes)))
    cols = [np.concatenate([part[i] for part in parts]) for i in range(4)]
    meta = {
        "version": __version__,
        "seed": seed,
        "n": n,
        "R": complex_to_json(complex(R)),
        "efficiency": eff.to_dict(),
        "policy": policy.value,
        "fixed": None if fixed_idx is None else [SETTINGS[i].value for i in fixed_idx],
        "block_size": block_size,
        "params": p.to_dict(),
        "rng": "numpy PCG64, one SeedSequence(seed).spawn child per block",
    }
    return EventLog(*cols, meta=meta)


def write_event_log(log: EventLog, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, meta_path = out_dir / "events.csv", out_dir / "events.json"
        code = log.pair_index() * 9 + log.outcome_l.astype(np.int64) * 3 + log.outcome_r
        with csv_path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(_CSV_HEADER + "\n")
            for start in range(0, code.size, DEFAULT_BLOCK):
                chunk = _LINES[code[start:start + DEFAULT_BLOCK]]
                fh.write("\n".join(chunk.tolist()) + "\n")
        meta_path.write_text(json.dumps(log.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write event log under {out_dir}: {exc}") from exc
    return csv_path, meta_path


def read_event_log(out_dir: str | Path) -> EventLog:
    out_dir = Path(out_dir)
    lookup = {line: i for i, line in enumerate(_line_table())}
    with (out_dir / "events.csv").open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != _CSV_HEADER:
            raise ValueError(f"unexpected header in {out_dir / 'events.csv'}: {header!r}")
        code = np.array([lookup[line.strip()] for line in fh if line.strip()], dtype=np.int64)
    meta = json.loads((out_dir / "events.json").read_text(encoding="utf-8"))
    pair, cell = code // 9, code % 9
    return EventLog(
        (pair // 2).astype(np.int8), (pair % 2).astype(np.int8),
        (cell // 3).astype(np.int8), (cell % 3).astype(np.int8), meta,
    )


# ------------------------------------------------------------ estimation


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float


@dataclass(frozen=True)
class InequalityEstimate:
    H: Estimate
    Q: Estimate
    table: ProbabilityTable
    pair_counts: dict[str, int]

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else str(x)

        return {
            "H": num(self.H.value),
            "sigma_H": num(self.H.sigma),
            "H_violated": self.H.value > 1.0,
            "Q": num(self.Q.value),
            "sigma_Q": num(self.Q.sigma),
            "Q_violated": self.Q.value > 1.0,
            "table": self.table.as_dict(),
            "pair_counts": self.pair_counts,
        }


def _cell_index(name: str) -> tuple[int, int]:
    sl, sr, ol, orr = TABLE_CELLS[name]
    return PAIRS.index((sl, sr)), OUTCOMES[sl].index(ol) * 3 + OUTCOMES[sr].index(orr)


def _ratio(freq: np.ndarray, totals: np.ndarray, num: Mapping[str, float], den: Mapping[str, float]) -> Estimate:
    """N/D of linear forms in conditional frequencies, with delta-method error.

    Each setting pair is an independent multinomial, so the covariance is
    block diagonal: cov_k = (diag(f_k) - f_k f_k^T) / N_k.
    """
    a = np.zeros((4, 9))
    d = np.zeros((4, 9))
    for coeffs, target in ((num, a), (den, d)):
        for name, c in coeffs.items():
            k, j = _cell_index(name)
            target[k, j] += c
    N = float(np.sum(a * freq))
    D = float(np.sum(d * freq))
    if D == 0.0:
        value = math.inf if N > 0 else math.nan
        return Estimate(value, math.nan)
    grad = (a * D - d * N) / D**2
    var = 0.0
    for k in range(4):
        g, f = grad[k], freq[k]
        var += (np.dot(g * g, f) - np.dot(g, f) ** 2) / totals[k]
    return Estimate(N / D, math.sqrt(max(var, 0.0)))


def estimate_inequalities(log: EventLog) -> InequalityEstimate:
    if len(log) == 0:
        raise ValueError("empty event log")
    counts = log.counts().reshape(4, 9).astype(float)
    totals = counts.sum(axis=1)
    missing = [PAIRS[k] for k in range(4) if totals[k] == 0]
    if missing:
        raise MissingSettingPairs(missing)
    freq = counts / totals[:, None]
    table = ProbabilityTable(**{name: float(freq[_cell_index(name)]) for name in TABLE_CELLS})
    pair_counts = {f"{sl.value}{sr.value}": int(totals[k]) for k, (sl, sr) in enumerate(PAIRS)}
    return InequalityEstimate(
        _ratio(freq, totals, H_NUMERATOR, H_DENOMINATOR),
        _ratio(freq, totals, Q_NUMERATOR, Q_DENOMINATOR),
        table,
        pair_counts,
    )


def absolute_table(log: EventLog) -> ProbabilityTable:
    """Table normalized to all generated pairs instead of per setting pair."""
    counts = log.counts().reshape(4, 9).astype(float) / len(log)
    return ProbabilityTable(**{name: float(counts[_cell_index(name)]) for name in TABLE_CELLS})
