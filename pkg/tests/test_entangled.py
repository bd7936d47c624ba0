import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesonbell.entangled import (
    PairState,
    evolve_pair,
    initial_pair,
    joint_probability,
    joint_probability_beauty,
    pair_amplitude_probability,
)
from mesonbell.meson import Basis, MesonParams

pytestmark = pytest.mark.invariant

taus = st.floats(0.0, 25.0, allow_nan=False)
FLAVOURS = ["K0", "K0bar"]
LIFETIMES = ["KS", "KL"]


@pytest.mark.parametrize("basis", list(Basis))
def test_initial_pair_antisymmetric_and_normalized(kaon, basis):
    s = initial_pair(kaon).to_basis(basis)
    c = s.coeffs
    assert np.allclose(c, -c.T, atol=1e-12)
    assert s.norm2() == pytest.approx(1.0, abs=1e-12)


def test_lifetime_form_has_no_equal_components(kaon):
    c = initial_pair(kaon).to_basis(Basis.LIFETIME).coeffs
    assert abs(c[0, 0]) < 1e-15 and abs(c[1, 1]) < 1e-15
    assert abs(c[0, 1]) == pytest.approx(1 / math.sqrt(2), rel=1e-4)


@settings(max_examples=80, deadline=None)
@given(
    tl=taus,
    tr=taus,
    left=st.sampled_from(FLAVOURS + LIFETIMES),
    right=st.sampled_from(FLAVOURS + LIFETIMES),
)
def test_closed_forms_match_amplitudes(kaon, tl, tr, left, right):
    assert joint_probability(left, tl, right, tr, kaon) == pytest.approx(
        pair_amplitude_probability(left, tl, right, tr, kaon), abs=1e-12
    )


@settings(max_examples=40, deadline=None)
@given(t=taus)
def test_same_flavour_vanishes_at_equal_times(kaon, t):
    assert joint_probability("K0", t, "K0", t, kaon) == 0.0
    assert joint_probability("K0bar", t, "K0bar", t, kaon) == 0.0


@settings(max_examples=40, deadline=None)
@given(tl=taus, tr=taus)
def test_no_equal_lifetime_pairs(kaon, tl, tr):
    assert joint_probability("KS", tl, "KS", tr, kaon) == 0.0
    assert joint_probability("KL", tl, "KL", tr, kaon) == 0.0


@settings(max_examples=40, deadline=None)
@given(tl=taus, tr=taus)
def test_flavour_sum_is_survival(kaon, tl, tr):
    total = sum(joint_probability(a, tl, b, tr, kaon) for a in FLAVOURS for b in FLAVOURS)
    g_s, g_l = kaon.gamma_S, kaon.gamma_L
    expected = 0.5 * (math.exp(-(g_l * tl + g_s * tr)) + math.exp(-(g_s * tl + g_l * tr)))
    assert total == pytest.approx(expected, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(tl=taus, tr=taus)
def test_pair_norm_is_survival(kaon, tl, tr):
    s = evolve_pair(initial_pair(kaon), tl, tr, kaon)
    g_s, g_l = kaon.gamma_S, kaon.gamma_L
    expected = 0.5 * (math.exp(-(g_l * tl + g_s * tr)) + math.exp(-(g_s * tl + g_l * tr)))
    assert s.norm2() == pytest.approx(expected, rel=1e-4, abs=1e-14)


def test_amplitude_tag_lookup(kaon):
    s = initial_pair(kaon)
    assert abs(s.amplitude("K0", "K0bar")) == pytest.approx(1 / math.sqrt(2))
    assert s.amplitude("K0", "K0") == 0


def test_evolve_rejects_negative_time(kaon):
    with pytest.raises(ValueError):
        evolve_pair(initial_pair(kaon), -0.1, 1.0, kaon)


def test_beauty_equal_times_opposite(bmeson):
    assert joint_probability_beauty("B0", 0.0, "B0bar", 0.0, bmeson) == pytest.approx(0.5)
    assert joint_probability_beauty("B0", 0.0, "B0", 0.0, bmeson) == 0.0


def test_beauty_equal_times_without_delta_m():
    p = MesonParams.defaults("b")
    assert joint_probability_beauty("B0", 1.0, "B0bar", 1.0, p) == pytest.approx(0.5 * math.exp(-2))
    with pytest.raises(ValueError, match="delta_m"):
        joint_probability_beauty("B0", 1.0, "B0bar", 2.0, p)


@settings(max_examples=40, deadline=None)
@given(tl=taus, tr=taus, left=st.sampled_from(["B0", "B0bar"]), right=st.sampled_from(["B0", "B0bar"]))
def test_beauty_matches_general_path(bmeson, tl, tr, left, right):
    assert joint_probability_beauty(left, tl, right, tr, bmeson) == pytest.approx(
        pair_amplitude_probability(left, tl, right, tr, bmeson), abs=1e-12
    )


def test_beauty_rejects_kaons(kaon):
    with pytest.raises(ValueError):
        joint_probability_beauty("K0", 0.0, "K0bar", 0.0, kaon)


def test_pair_state_basis_round_trip(kaon):
    s = PairState(Basis.CP, Basis.STRANGENESS, np.array([[0.3, 0.1j], [0.2, -0.5]]), kaon.epsilon)
    back = s.to_basis(Basis.LIFETIME, Basis.CP).to_basis(Basis.CP, Basis.STRANGENESS)
    assert np.allclose(back.coeffs, s.coeffs, atol=1e-12)
