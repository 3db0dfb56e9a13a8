import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from _oracles import brute_force_pair_posteriors, rsc_parity_by_hand
from cmlab.channel import apply_awgn, sigma_from_snr
from cmlab.errors import LengthError
from cmlab.modulation import build_8psk
from cmlab.ttcm import (
    BELIEF_CLIP, LABEL, NEXT_STATE, OddEvenInterleaver, RscState, bcjr, build_interleaver,
    data_to_pairs, default_spread, first_iteration_a_priori, pair_beliefs_to_llrs, rsc_encode,
    rsc_step, spread_violations, ttcm_decode, ttcm_decode_ll, ttcm_encode, ttcm_labels,
)

NAT = build_8psk("natural")


# -- RSC ---------------------------------------------------------------

def test_zero_state_emits_zero_parity():
    for u in range(4):
        assert rsc_step(RscState(), (u >> 1, u & 1))[1] == 0


def test_step_by_hand():
    nxt, p = rsc_step(RscState(0, 0, 0), (1, 0))
    assert (nxt, p) == (RscState(0, 0, 1), 0)
    # parity is the last register; feedback goes to the first
    nxt, p = rsc_step(RscState(0, 0, 1), (0, 0))
    assert (nxt, p) == (RscState(1, 0, 0), 1)


def test_state_update_is_bijective_per_input():
    for u in range(4):
        assert sorted(NEXT_STATE[:, u]) == list(range(8))


def test_all_states_reachable():
    seen, frontier = {0}, {0}
    while frontier:
        frontier = {int(NEXT_STATE[s, u]) for s in frontier for u in range(4)} - seen
        seen |= frontier
    assert seen == set(range(8))


def test_zero_input_zero_parity_forever():
    assert not rsc_encode(np.zeros(1000, dtype=int)).any()


@given(st.lists(st.integers(0, 3), min_size=1, max_size=200))
def test_rsc_encode_matches_step_chain(pairs):
    assert np.array_equal(rsc_encode(pairs), rsc_parity_by_hand(pairs))


# -- interleaver --------------------------------------------------------

def _check_interleaver(il, spread):
    n = il.n
    assert np.array_equal(np.sort(il.pi), np.arange(n))
    assert np.all(il.pi % 2 == np.arange(n) % 2)
    assert spread_violations(il.pi, spread) == 0


def test_interleaver_64800_full_scan():
    il = build_interleaver(64800, seed=0)
    assert il.spread == default_spread(64800) > 0
    _check_interleaver(il, il.spread)


def test_interleaver_21600():
    il = build_interleaver(21600, seed=0)
    _check_interleaver(il, il.spread)


def test_spread_zero_accepts_parity_preserving():
    il = build_interleaver(100, spread=0, seed=1)
    _check_interleaver(il, 0)


def test_interleaver_deterministic():
    a = build_interleaver(2000, spread=20, seed=11)
    build_interleaver.cache_clear()
    b = build_interleaver(2000, spread=20, seed=11)
    assert np.array_equal(a.pi, b.pi)
    assert not np.array_equal(a.pi, build_interleaver(2000, spread=20, seed=12).pi)


def test_interleaver_guards():
    with pytest.raises(ValueError, match="even"):
        build_interleaver(101)
    with pytest.raises(ValueError, match="spread"):
        build_interleaver(200, spread=11)


def test_interleave_roundtrip():
    il = build_interleaver(400, spread=10, seed=2)
    x = np.arange(400) * 3
    assert np.array_equal(il.deinterleave(il.interleave(x)), x)
    assert np.array_equal(il.interleave(x)[il.inverse], x)


def test_spread_violations_counts_pairs():
    # identity permutation: every pair within distance S violates
    assert spread_violations(np.arange(10), 2) == 9 + 8


# -- encoder ------------------------------------------------------------

def test_zero_data_gives_label_zero():
    il = build_interleaver(200, spread=8, seed=0)
    y = ttcm_encode(np.zeros(400, dtype=int), il)
    np.testing.assert_allclose(y, np.tile(NAT.points[0], (200, 1)))


def test_encode_length_and_rate():
    il = build_interleaver(64800, seed=0)
    data = np.random.default_rng(0).integers(0, 2, 129600)
    assert ttcm_encode(data, il).shape == (64800, 2)


def test_encode_length_mismatch():
    il = build_interleaver(200, spread=8, seed=0)
    with pytest.raises(LengthError):
        ttcm_encode(np.zeros(398, dtype=int), il)
    with pytest.raises(LengthError):
        data_to_pairs([1, 0, 1])


def test_systematic_bits_and_odd_position_parity():
    il = build_interleaver(600, spread=15, seed=3)
    data = np.random.default_rng(1).integers(0, 2, 1200)
    labels = ttcm_labels(data, il)
    u = data_to_pairs(data)
    assert np.array_equal(labels >> 1, u)
    standalone = rsc_parity_by_hand(u)
    # 1-based odd positions are even array indices
    assert np.array_equal(labels[0::2] & 1, standalone[0::2])
    second = il.deinterleave(rsc_parity_by_hand(il.interleave(u)))
    assert np.array_equal(labels[1::2] & 1, second[1::2])


@given(st.integers(0, 2**31 - 1))
def test_encoder_linearity(seed):
    il = build_interleaver(120, spread=5, seed=4)
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 2, (2, 240))
    assert np.array_equal(ttcm_labels(a ^ b, il), ttcm_labels(a, il) ^ ttcm_labels(b, il))


# -- first-iteration metric ----------------------------------------------

def test_first_iteration_uniform():
    la = first_iteration_a_priori(np.zeros((6, 8)))
    np.testing.assert_allclose(la, np.log(0.25))


def test_first_iteration_dominant_label():
    ll = np.full((4, 8), -100.0)
    ll[:, 4] = 0.0  # label (1,0,0)
    la = first_iteration_a_priori(ll)
    assert np.all(np.argmax(la[1::2], axis=1) == 2)
    np.testing.assert_allclose(la[0::2], np.log(0.25))


def test_first_iteration_probability_domain(rng):
    ll = rng.normal(scale=3.0, size=(10, 8))
    la = first_iteration_a_priori(ll)
    p = np.exp(ll)
    marg = p[:, 0::2] + p[:, 1::2]
    expected = np.log(marg / marg.sum(axis=1, keepdims=True))
    np.testing.assert_allclose(la[1::2], expected[1::2], atol=1e-12)


def test_first_iteration_sum_mode(rng):
    ll = rng.normal(size=(4, 8))
    la = first_iteration_a_priori(ll, "sum")
    s = ll[:, 0::2] + ll[:, 1::2]
    np.testing.assert_allclose(la[1::2], s[1::2] - logsumexp(s[1::2], axis=1, keepdims=True))
    with pytest.raises(ValueError):
        first_iteration_a_priori(ll, "max")


# -- BCJR ---------------------------------------------------------------

def test_bcjr_uniform():
    post = bcjr(np.zeros((12, 8)), np.zeros((12, 4)))
    np.testing.assert_allclose(post, np.log(0.25), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_bcjr_matches_enumeration(n, rng):
    for _ in range(5):
        ll = rng.normal(scale=2.0, size=(n, 8))
        ll[rng.random(n) < 0.3] = 0.0  # punctured positions
        la = rng.normal(size=(n, 4))
        la -= logsumexp(la, axis=1, keepdims=True)
        np.testing.assert_allclose(bcjr(ll, la), brute_force_pair_posteriors(ll, la), atol=1e-9)


def test_bcjr_posteriors_normalized(rng):
    post = bcjr(rng.normal(scale=5, size=(300, 8)), np.zeros((300, 4)))
    np.testing.assert_allclose(logsumexp(post, axis=1), 0.0, atol=1e-12)


def test_bcjr_noiseless_recovers_pairs(rng):
    u = rng.integers(0, 4, 50)
    labels = 2 * u + rsc_encode(u)
    ll = np.full((50, 8), -60.0)
    ll[np.arange(50), labels] = 0.0
    assert np.array_equal(np.argmax(bcjr(ll, np.zeros((50, 4))), axis=1), u)


def test_bcjr_length_mismatch():
    with pytest.raises(LengthError):
        bcjr(np.zeros((4, 8)), np.zeros((5, 4)))


def test_trellis_label_table():
    for s in range(8):
        for u in range(4):
            nxt, p = rsc_step(RscState.from_int(s), (u >> 1, u & 1))
            assert LABEL[s, u] == 2 * u + p and NEXT_STATE[s, u] == nxt.to_int()


# -- iterative decoder ---------------------------------------------------

def test_decode_noiseless():
    il = build_interleaver(2000, spread=25, seed=5)
    data = np.random.default_rng(2).integers(0, 2, 4000)
    out = ttcm_decode(ttcm_encode(data, il), sigma_from_snr(30.0, NAT), il)
    assert np.array_equal(out.data_bits, data)
    assert np.min(np.abs(out.lam)) > 10


def test_decode_signs_match_decisions(rng):
    il = build_interleaver(2000, spread=25, seed=5)
    data = rng.integers(0, 2, 4000)
    y = apply_awgn(ttcm_encode(data, il), sigma_from_snr(5.0, NAT), 3)
    out = ttcm_decode(y, sigma_from_snr(5.0, NAT), il, iterations=4)
    assert np.array_equal(out.data_bits, (out.lam.ravel() < 0).astype(np.uint8))
    assert out.lam.shape == (2000, 2)


def test_decode_stable_over_many_iterations(rng):
    il = build_interleaver(1000, spread=15, seed=6)
    data = rng.integers(0, 2, 2000)
    sigma = sigma_from_snr(7.0, NAT)
    out = ttcm_decode(apply_awgn(ttcm_encode(data, il), sigma, 4), sigma, il, iterations=100)
    assert np.all(np.isfinite(out.lam))
    # posterior log-ratios are bounded by channel evidence plus the clipped a priori
    assert np.max(np.abs(out.lam)) < 2 * BELIEF_CLIP + 600


def test_decode_beats_uncoded_at_moderate_snr(rng):
    il = build_interleaver(21600, seed=0)
    data = rng.integers(0, 2, 43200)
    sigma = sigma_from_snr(6.8, NAT)
    out = ttcm_decode(apply_awgn(ttcm_encode(data, il), sigma, 8), sigma, il)
    assert np.mean(out.data_bits != data) < 1e-3


def test_decode_requires_iterations():
    il = build_interleaver(20, spread=2, seed=0)
    with pytest.raises(ValueError):
        ttcm_decode_ll(np.zeros((20, 8)), il, iterations=0)


def test_pair_llrs():
    b = np.log(np.array([[0.4, 0.3, 0.2, 0.1]]))
    lam = pair_beliefs_to_llrs(b)
    np.testing.assert_allclose(lam, [[np.log(0.7 / 0.3), np.log(0.6 / 0.4)]])


def test_interleaver_dataclass_fields():
    il = OddEvenInterleaver(pi=np.array([0, 1]), spread=0, seed=0)
    assert il.n == 2
