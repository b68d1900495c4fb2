import itertools
import math

import numpy as np
import pytest
import sympy as sp
from scipy.special import comb, erfc

from ftnlab.analysis import (BoundConfig, brute_force_map, brute_force_ml, cc_error_events, cc_error_events_pairwise,
                             coded_bound, distances, enumerate_error_sequences, event_spectra, finite_tap_error_prob,
                             ftn_error_spectrum, pairwise_error_prob, qfunc, sigma_r_oracle, sigma_rl,
                             uncoded_union_bound, window_spectrum)
from ftnlab.channel import IsiProfile, PulseSpec, build_gram, isi_taps, truncate_gram

PROF = isi_taps(PulseSpec(0.6, 0.3, 11))


def random_error(rng, N, w_max=8):
    w = int(rng.integers(1, w_max + 1))
    e = np.zeros(N)
    e[rng.choice(N, w, replace=False)] = rng.choice([-2.0, 2.0], w)
    return e


# ------------------------------------------------------------------ distances and probabilities


def test_distances_examples():
    G = build_gram(PROF, 30)
    F = truncate_gram(G, 3, 11)
    assert distances(np.zeros(30), G, F) == (0.0, 0.0, 0)
    e = np.zeros(30)
    e[7] = -2.0
    assert distances(e, G, F)[0] == pytest.approx(2.0)
    e[8] = 2.0
    d2, d2o, w = distances(e, G, G)
    assert d2 == d2o and w == 2


def test_pairwise_error_prob():
    assert pairwise_error_prob(0.0, 3.0) == 0.5
    assert pairwise_error_prob(2.0, 1.0) == pytest.approx(0.5 * erfc(1.0), rel=1e-14)
    v = pairwise_error_prob(np.array([0.5, 1.0, 2.0]), 2.0)
    assert np.all(np.diff(v) < 0)
    assert pairwise_error_prob(1.0, 4.0) < pairwise_error_prob(1.0, 2.0)
    with pytest.raises(ValueError):
        pairwise_error_prob(-1.0, 1.0)


def test_sigma_rl_trivial(rng):
    G = build_gram(PROF, 30)
    e = random_error(rng, 30)
    assert sigma_rl(e, G, G) == 0.0
    assert sigma_rl(np.zeros(30), G, truncate_gram(G, 2, 11)) == 0.0


def test_sigma_rl_closed_form(rng):
    # on the support x_j = e_j / 2, so the bound is Eb (d^2 - d_ope^2)^2 / 2
    G = build_gram(PROF, 40)
    F = truncate_gram(G, 3, 11)
    for _ in range(50):
        e = random_error(rng, 40)
        d2, d2o, _ = distances(e, G, F, 2.0)
        assert sigma_rl(e, G, F, 2.0) == pytest.approx(2.0 * (d2 - d2o) ** 2 / 2, abs=1e-13)


def test_sigma_r_oracle_cases(rng):
    G = build_gram(PROF, 12)
    F = truncate_gram(G, 2, 11)
    e = random_error(rng, 12)
    est, se = sigma_r_oracle(e, G, G, 1.0, rng, 1000)
    assert est == 0.0
    full = np.where(rng.random(12) < 0.5, 2.0, -2.0)
    est, se = sigma_r_oracle(full, G, F, 1.0, rng, 1000)
    assert se == 0.0 and est == pytest.approx(sigma_rl(full, G, F))
    with pytest.raises(ValueError):
        sigma_r_oracle(e, G, F, 1.0, rng, 999)


def test_sigma_rl_is_lower_bound(rng):
    G = build_gram(PROF, 40)
    F = truncate_gram(G, 3, 11)
    for _ in range(200):
        e = random_error(rng, 40)
        est, se = sigma_r_oracle(e, G, F, 1.0, rng, 2000)
        lo = sigma_rl(e, G, F)
        assert lo <= est + 3 * se + 1e-12
        assert est >= lo - 3 * se - 1e-12


def test_finite_tap_prob():
    assert finite_tap_error_prob(1.3, 1.3, 0.0, 2.5) == pytest.approx(pairwise_error_prob(1.3, 2.5))
    p = [finite_tap_error_prob(1.3, 1.1, s, 10.0) for s in (0.0, 0.01, 0.1, 1.0)]
    assert np.all(np.diff(p) > 0)
    d2, d2o, s, Eb = 1.4, 1.1, 0.05, 2.0
    plateau = qfunc(math.sqrt(Eb * d2o**2 / (2 * s)))
    assert finite_tap_error_prob(d2, d2o, s, 1e12, Eb) == pytest.approx(plateau, rel=1e-6)
    # direct evaluation of the expression at a finite SNR
    ebn0 = 10 ** 0.8
    N0 = Eb / ebn0
    direct = 0.5 * erfc(math.sqrt((Eb * d2o**2 / N0) / (d2 + 2 * s / N0)) / math.sqrt(2))
    assert finite_tap_error_prob(d2, d2o, s, ebn0, Eb) == pytest.approx(direct, rel=1e-13)


# ------------------------------------------------------------------ uncoded bound and brute force


def test_union_bound_n2_by_hand():
    a = 0.4
    G = np.array([[1.0, a], [a, 1.0]])
    E = enumerate_error_sequences(2, 2)
    assert len(E) == 8
    ebn0 = 10 ** 0.5
    hand = 0.0
    for e in E:
        w = np.count_nonzero(e)
        d2 = e @ G @ e / 2
        hand += w / (2**w * 2) * 0.5 * erfc(math.sqrt(d2 * ebn0) / math.sqrt(2))
    assert uncoded_union_bound(G, 5.0)[0] == pytest.approx(hand, rel=1e-13)


def test_union_bound_nyquist_limit():
    G = np.eye(6)
    for snr in (8.0, 12.0):
        ratio = uncoded_union_bound(G, snr)[0] / qfunc(math.sqrt(2 * 10 ** (snr / 10)))
        assert 1.0 <= ratio < 1.01


def test_enumeration_budget():
    with pytest.raises(ValueError):
        enumerate_error_sequences(40, 8, budget=1000)


def test_brute_force_oracles(rng):
    y = rng.normal(size=6)
    prior = rng.normal(size=6)
    np.testing.assert_allclose(brute_force_map(y, np.eye(6), 0.5, prior), prior + 2 * y / 0.5, atol=1e-12)
    G = build_gram(PROF, 8)
    y = rng.normal(size=8)
    np.testing.assert_array_equal(brute_force_ml(y, G), brute_force_ml(3.0 * y, 3.0 * G))
    with pytest.raises(ValueError):
        brute_force_map(np.zeros(21), np.eye(21), 1.0)


# ------------------------------------------------------------------ convolutional-code events


def transfer_counts(max_w):
    """Coefficients of the (7,5) transfer function D^5 N J^3 / (1 - D N J (1 + J))."""
    D, Nn, J = sp.symbols("D N J")
    T = D**5 * Nn * J**3 / (1 - D * Nn * J * (1 + J))
    poly = sp.Poly(sp.series(T, D, 0, max_w + 1).removeO(), D, Nn, J)
    return {(int(d), int(n), int(j)): int(c) for (d, n, j), c in poly.terms()}


def test_event_search_matches_transfer_function():
    events = cc_error_events(w_max=8, K_prime=12)
    counts = {}
    for ev in events:
        key = (ev.weight, ev.info_errors, ev.length)
        counts[key] = counts.get(key, 0) + 1
    assert counts == transfer_counts(8)
    by_weight = [sum(1 for e in events if e.weight == w) for w in range(5, 9)]
    assert by_weight == [1, 2, 4, 8]
    assert min(e.weight for e in events) == 5
    first = min(events, key=lambda e: (e.weight, e.length))
    assert (first.weight, first.info_errors, first.length) == (5, 1, 3)


def test_event_search_matches_pairwise_oracle():
    fast = {(e.weight, e.info_errors, e.length, e.pattern) for e in cc_error_events(w_max=8, K_prime=12)
            if e.length - 2 <= 7}
    slow = {(e.weight, e.info_errors, e.length, e.pattern) for e in cc_error_events_pairwise(w_max=8, K_prime=7)}
    assert fast == slow


# ------------------------------------------------------------------ FTN distance spectra


def brute_spectrum(w, G, F, Eb):
    N = G.shape[0]
    table = {}
    for pos in itertools.combinations(range(N), w):
        for s in itertools.product((2.0, -2.0), repeat=w):
            e = np.zeros(N)
            e[list(pos)] = s
            key = (round(e @ G @ e / (2 * Eb), 8), round(e @ F @ e / (2 * Eb), 8))
            table[key] = table.get(key, 0) + 1
    return table


@pytest.mark.parametrize("w", [1, 2, 3, 4])
def test_spectrum_matches_brute_force(w):
    N, L_E, Eb = 15, 2, 1.7
    G = build_gram(PROF, N)
    F = truncate_gram(G, L_E, 11)
    ref = brute_spectrum(w, G, F, Eb)
    spec = ftn_error_spectrum(w, PROF, L_E, N, Eb)
    assert spec.sampled == 0
    ref_rows = sorted((a, b, m) for (a, b), m in ref.items())
    got_rows = sorted(zip(spec.d2, spec.d2_ope, spec.multiplicity))
    np.testing.assert_allclose(np.array(got_rows), np.array(ref_rows, dtype=float), atol=1e-7)
    assert spec.multiplicity.sum() == pytest.approx(comb(N, w) * 2**w)


def test_spectrum_nyquist_special_case():
    spec = ftn_error_spectrum(3, IsiProfile(np.array([1.0])), 0, 20)
    assert len(spec.d2) == 1
    assert spec.d2[0] == pytest.approx(6.0)
    assert spec.multiplicity[0] == pytest.approx(comb(20, 3) * 8)


def test_sampled_spectrum_matches_random_placements(rng):
    w, N, L_E, Eb = 6, 250, 3, 250 / 123
    spec = ftn_error_spectrum(w, PROF, L_E, N, Eb, rng=np.random.default_rng(1))
    assert spec.sampled > 0
    assert spec.multiplicity.sum() / spec.total == pytest.approx(1.0, abs=1e-6)
    G = build_gram(PROF, N)
    F = truncate_gram(G, L_E, 11)
    n = 20000
    E = np.zeros((n, N))
    for r in range(n):
        E[r, rng.choice(N, w, replace=False)] = rng.choice([-2.0, 2.0], w)
    d2 = np.einsum("ij,jk,ik->i", E, G, E) / (2 * Eb)
    d2o = np.einsum("ij,jk,ik->i", E, F, E) / (2 * Eb)
    for f in (lambda a, b, s: a, lambda a, b, s: b, lambda a, b, s: (a < 5.0).astype(float)):
        vals = f(d2, d2o, None)
        mc, se = vals.mean(), vals.std(ddof=1) / math.sqrt(n)
        assert abs(spec.expected(f) - mc) < 4 * se + 1e-9


@pytest.mark.parametrize("w", [1, 2])
def test_contiguous_window_groups_equal_sign_classes(w):
    rows, groups, G, F = window_spectrum(w, PROF, 3, w)
    assert len(groups) == 2 ** (w - 1)


@pytest.mark.parametrize("w", [3, 4, 5])
def test_contiguous_window_groups_follow_sign_and_reversal(w):
    rows, groups, G, F = window_spectrum(w, PROF, 3, w)
    orbits = set()
    for s in itertools.product((1, -1), repeat=w):
        s = np.array(s)
        orbits.add(min(tuple(v) for v in (s, -s, s[::-1], -s[::-1])))
    assert len(groups) == len(orbits)


def test_group_invariants(rng):
    rows, groups, G, F = window_spectrum(4, PROF, 2, 9)
    for members in groups.values():
        s = [sigma_rl(e, G, F) for e in members]
        assert max(s) - min(s) < 1e-12
    Gb = build_gram(PROF, 60)
    Fb = truncate_gram(Gb, 2, 11)
    for _ in range(20):
        e = np.zeros(60)
        e[20:29] = rows[rng.integers(len(rows))]
        shifted = np.roll(e, 5)
        assert distances(e, Gb, Fb) == pytest.approx(distances(shifted, Gb, Fb), abs=1e-12)
        assert sigma_rl(e, Gb, Fb) == pytest.approx(sigma_rl(shifted, Gb, Fb), abs=1e-12)
        assert distances(e, Gb, Fb) == distances(-e, Gb, Fb)


# ------------------------------------------------------------------ coded bounds


@pytest.fixture(scope="module")
def bound_inputs():
    events = cc_error_events(w_max=6)
    full = BoundConfig(L_E=11, w_max=6)
    trunc = BoundConfig(L_E=3, w_max=6)
    rng = np.random.default_rng(0)
    return events, full, event_spectra(full, PROF, events, rng), trunc, event_spectra(trunc, PROF, events, rng)


def test_full_taps_reduce_to_plain_form(bound_inputs):
    events, full, sp_full, _, _ = bound_inputs
    snr = [3.0, 5.0, 7.0]
    a = coded_bound(full, events, sp_full, snr, full_taps=False)
    b = coded_bound(full, events, sp_full, snr, full_taps=True)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_bound_shape_and_ordering(bound_inputs):
    events, full, sp_full, trunc, sp_trunc = bound_inputs
    snr = np.arange(2.0, 10.0)
    b14 = coded_bound(full, events, sp_full, snr, full_taps=True)
    b15 = coded_bound(trunc, events, sp_trunc, snr)
    assert np.all(b14 >= 0) and np.all(np.diff(b14) < 0) and np.all(np.diff(b15) < 0)
    # pointwise ordering only where d_ope^2 <= d^2 holds for every group
    if all(np.all(sp_trunc[w].d2_ope <= sp_trunc[w].d2) for w in sp_trunc):
        assert np.all(b15 >= b14)


def test_effective_rates():
    assert round(BoundConfig(K=123, N=250, L_E=3).rate, 3) == 0.492
    assert round(BoundConfig(K=123, N=250, L_E=7, pad=7).rate, 3) == 0.466
