import hashlib
import math

import numpy as np
import pytest
from scipy import stats

from mesonbell import montecarlo as mc
from mesonbell.detector import EfficiencyModel, hardy_table, setting_pair_matrices
from mesonbell.inequalities import ch_Q, eberhard_H
from mesonbell.montecarlo import (
    PAIRS,
    ConsistencyError,
    MissingSettingPairs,
    absolute_table,
    estimate_inequalities,
    generate_events,
    outcome_distributions,
    read_event_log,
    write_event_log,
)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.mark.invariant
def test_deterministic_and_thread_independent(tmp_path, kaon):
    eff = EfficiencyModel.build("channel", 0.3, 0.3, 0.9, kaon)
    a = generate_events(-1, eff, 250_000, 17, p=kaon, block_size=100_000)
    b = generate_events(-1, eff, 250_000, 17, p=kaon, block_size=100_000, threads=3)
    write_event_log(a, tmp_path / "a")
    write_event_log(b, tmp_path / "b")
    assert _digest(tmp_path / "a" / "events.csv") == _digest(tmp_path / "b" / "events.csv")
    assert _digest(tmp_path / "a" / "events.json") == _digest(tmp_path / "b" / "events.json")
    c = generate_events(-1, eff, 250_000, 18, p=kaon, block_size=100_000)
    assert not np.array_equal(a.outcome_l, c.outcome_l)


def test_round_trip(tmp_path, kaon):
    log = generate_events(-1, EfficiencyModel.ideal(0.5, 0.5), 2000, 1, p=kaon)
    write_event_log(log, tmp_path)
    back = read_event_log(tmp_path)
    for name in ("setting_l", "setting_r", "outcome_l", "outcome_r"):
        assert np.array_equal(getattr(back, name), getattr(log, name))
    assert back.meta == log.meta
    assert (tmp_path / "events.csv").read_text().startswith("setting_l,setting_r,outcome_l,outcome_r\nS,")


def test_ideal_strangeness_pair_conditioning(kaon):
    # conditioned on (S, S) the table's 1/12 is already the frequency;
    # relative to all pairs it is 1/48 under 50/50 settings
    n = 400_000
    log = generate_events(-1, EfficiencyModel.ideal(1, 1), n, 3, p=kaon)
    counts = log.counts()
    ss = counts[0]
    freq = ss[0, 1] / ss.sum()
    assert abs(freq - 1 / 12) < 5 * math.sqrt((1 / 12) * (11 / 12) / ss.sum())
    assert abs(ss[0, 1] / n - 1 / 48) < 5 * math.sqrt((1 / 48) / n)
    assert ss[0, 0] / ss.sum() == pytest.approx(1 / 12, abs=0.003)
    assert ss[1, 0] / ss.sum() == pytest.approx(3 / 4, abs=0.005)


@pytest.mark.invariant
def test_zero_flavour_efficiency_is_undetected(kaon):
    log = generate_events(-1, EfficiencyModel.build("channel", 0, 0, 1, kaon), 20_000, 2, p=kaon)
    strange_l = log.setting_l == 0
    strange_r = log.setting_r == 0
    assert np.all(log.outcome_l[strange_l] == 2)
    assert np.all(log.outcome_r[strange_r] == 2)


@pytest.mark.invariant
def test_conditioned_frequencies_match_table(kaon):
    eff = EfficiencyModel.build("channel", 0.6, 0.4, 0.9, kaon)
    log = generate_events(0.3 - 0.8j, eff, 1_000_000, 5, p=kaon)
    counts = log.counts()
    mats = setting_pair_matrices(0.3 - 0.8j, eff, kaon)
    for k, pair in enumerate(PAIRS):
        n = counts[k].sum()
        p = mats[pair]
        sigma = np.sqrt(np.maximum(p * (1 - p), 1e-12) / n)
        assert np.all(np.abs(counts[k] / n - p) < 5 * sigma + 1e-12)


@pytest.mark.invariant
def test_settings_independent_of_far_outcome(kaon):
    log = generate_events(-1, EfficiencyModel.build("channel", 0.5, 0.5, 1, kaon), 200_000, 8, p=kaon)
    right = log.setting_r.astype(int) * 3 + log.outcome_r
    table = np.zeros((2, 6))
    np.add.at(table, (log.setting_l.astype(int), right), 1)
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_consistency_check(monkeypatch, kaon):
    def broken(R, eff, p):
        return {k: 1.01 * m for k, m in setting_pair_matrices(R, eff, p).items()}

    monkeypatch.setattr(mc, "setting_pair_matrices", broken)
    with pytest.raises(ConsistencyError, match="sum to"):
        outcome_distributions(-1, EfficiencyModel.ideal(1, 1), kaon)


def test_missing_pairs_listed(kaon):
    log = generate_events(-1, EfficiencyModel.ideal(1, 1), 1000, 1, policy="fixed", fixed=("S", "L"), p=kaon)
    assert np.all(log.setting_l == 0) and np.all(log.setting_r == 1)
    with pytest.raises(MissingSettingPairs) as err:
        estimate_inequalities(log)
    assert len(err.value.missing) == 3
    assert "(S,S)" in str(err.value) and "(L,L)" in str(err.value)


def test_bad_arguments(kaon):
    with pytest.raises(ValueError):
        generate_events(-1, EfficiencyModel.ideal(1, 1), 0, 1, p=kaon)
    with pytest.raises(ValueError):
        generate_events(-1, EfficiencyModel.ideal(1, 1), 10, 1, policy="fixed", p=kaon)


def test_ideal_q_estimate(kaon):
    est = estimate_inequalities(generate_events(-1, EfficiencyModel.ideal(1, 1), 1_000_000, 7, p=kaon))
    assert abs(est.Q.value - 1.25) < 3 * est.Q.sigma
    assert math.isinf(est.H.value)


def test_below_threshold_h(kaon):
    eff = EfficiencyModel.build("channel", 0.01, 0.01, 1, kaon)
    est = estimate_inequalities(generate_events(-1, eff, 10_000_000, 13, p=kaon))
    assert est.H.value + 3 * est.H.sigma < 1


def test_sigma_shrinks_with_n(kaon):
    # eta_tau < 1 keeps every denominator cell well populated
    eff = EfficiencyModel.build("channel", 0.5, 0.5, 0.9, kaon)
    small = estimate_inequalities(generate_events(-1, eff, 100_000, 4, p=kaon)).H.sigma
    large = estimate_inequalities(generate_events(-1, eff, 1_600_000, 4, p=kaon)).H.sigma
    assert large / small == pytest.approx(0.25, rel=0.15)


@pytest.mark.invariant
def test_delta_method_calibration(kaon):
    eff = EfficiencyModel.build("channel", 0.2, 0.2, 0.98, kaon)
    exact = eberhard_H(hardy_table(-1, eff, kaon)).value
    exact_q = ch_Q(hardy_table(-1, eff, kaon)).value
    inside_h = inside_q = 0
    for seed in range(100):
        est = estimate_inequalities(generate_events(-1, eff, 200_000, 1000 + seed, p=kaon))
        inside_h += abs(est.H.value - exact) < 4 * est.H.sigma
        inside_q += abs(est.Q.value - exact_q) < 4 * est.Q.sigma
    assert inside_h >= 99
    assert inside_q >= 99


def test_absolute_and_conditional_normalizations_agree(kaon):
    eff = EfficiencyModel.build("channel", 0.5, 0.5, 1, kaon)
    log = generate_events(-1, eff, 2_000_000, 6, p=kaon)
    est = estimate_inequalities(log)
    absolute = absolute_table(log)
    # each setting pair carries about a quarter of the pairs, so H and Q agree
    # up to the spread of those fractions
    assert eberhard_H(absolute).value == pytest.approx(est.H.value, rel=0.01)
    assert ch_Q(absolute).value == pytest.approx(est.Q.value, rel=0.01)
    assert eberhard_H(est.table.scaled(0.25)).value == pytest.approx(est.H.value, rel=1e-12)


def test_estimate_dict(kaon):
    est = estimate_inequalities(generate_events(-1, EfficiencyModel.ideal(1, 1), 10_000, 1, p=kaon))
    d = est.to_dict()
    assert d["H"] == "inf" and d["H_violated"]
    assert set(d["pair_counts"]) == {"SS", "SL", "LS", "LL"}
