"""Error-sequence distances, pairwise error probabilities and union bounds.

Error sequences ``e = x - x'`` take values in {0, +2, -2}.  Distances are
normalized by ``2 Eb``; with unit symbol energy ``Eb = 1 / R``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb, erfc, logsumexp

from .channel import IsiProfile
from .coding import CcSpec


def qfunc(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


# ---------------------------------------------------------------------------
# single error sequences


def distances(e, G, F, Eb: float = 1.0):
    """Return ``(d^2, d_ope^2, w)`` for the error sequence ``e``."""
    e = np.asarray(e, dtype=float)
    return float(e @ G @ e) / (2 * Eb), float(e @ F @ e) / (2 * Eb), int(np.count_nonzero(e))


def pairwise_error_prob(d2, ebn0):
    """``Q(sqrt(d^2 Eb/N0))``; ``ebn0`` is linear."""
    d2 = np.asarray(d2, dtype=float)
    if np.any(d2 < 0):
        raise ValueError("squared distance must be non-negative")
    return qfunc(np.sqrt(d2 * ebn0))


def sigma_rl(e, G, F, Eb: float = 1.0) -> float:
    """Lower bound on the residual-ISI variance for ``e``.

    ``[sum_{j in P} x_j [(G - F) e]_j]^2 / (2 Eb)`` with ``x_j = e_j / 2`` on the support ``P``.
    """
    e = np.asarray(e, dtype=float)
    support = np.flatnonzero(e)
    r = (G - F) @ e
    s = np.sum(e[support] / 2.0 * r[support])
    return float(s * s) / (2 * Eb)


def sigma_r_oracle(e, G, F, Eb: float, rng: np.random.Generator, samples: int = 10_000):
    """Monte Carlo ``E_x[(x^T (G - F) e)^2] / (2 Eb)`` with ``x`` fixed by ``e`` on its support.

    Returns ``(estimate, standard_error)``.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    e = np.asarray(e, dtype=float)
    support = e != 0
    r = (G - F) @ e
    fixed = np.sum(e[support] / 2.0 * r[support])
    free = r[~support]
    if free.size == 0:
        val = fixed * fixed / (2 * Eb)
        return float(val), 0.0
    x = rng.choice([-1.0, 1.0], size=(samples, free.size))
    t = (fixed + x @ free) ** 2 / (2 * Eb)
    return float(t.mean()), float(t.std(ddof=1) / math.sqrt(samples))


def finite_tap_error_prob(d2, d2_ope, sigma2_r, ebn0, Eb: float = 1.0):
    """Pairwise error probability of an ML detector that models only ``L_E`` taps.

    ``Q(sqrt( (Eb d_ope^4 / N0) / (d^2 + 2 sigma_R^2 / N0) ))`` with ``N0 = Eb / ebn0``.
    """
    d2 = np.asarray(d2, dtype=float)
    d2_ope = np.asarray(d2_ope, dtype=float)
    if np.any(d2_ope < 0):
        raise ValueError("operative distance must be non-negative")
    N0 = Eb / np.asarray(ebn0, dtype=float)
    arg = (Eb * d2_ope * d2_ope / N0) / (d2 + 2.0 * np.asarray(sigma2_r, dtype=float) / N0)
    return qfunc(np.sqrt(np.maximum(arg, 0.0)))


# ---------------------------------------------------------------------------
# uncoded union bound


def enumerate_error_sequences(N: int, w_max: int, budget: int = 5_000_000) -> np.ndarray:
    """All ``e`` in {0, ±2}^N with ``1 <= w <= w_max`` as rows."""
    w_max = min(w_max, N)
    total = sum(comb(N, w, exact=True) * 2**w for w in range(1, w_max + 1))
    if total > budget:
        raise ValueError(f"enumeration of {total} error sequences exceeds the budget of {budget}")
    rows = []
    for w in range(1, w_max + 1):
        for pos in itertools.combinations(range(N), w):
            signs = np.array(list(itertools.product((2.0, -2.0), repeat=w)))
            block = np.zeros((len(signs), N))
            block[:, pos] = signs
            rows.append(block)
    return np.concatenate(rows) if rows else np.zeros((0, N))


def uncoded_union_bound(G, ebn0_db, w_max: int | None = None, Eb: float = 1.0, budget: int = 5_000_000):
    """Union bound on the ML bit error rate of an uncoded block."""
    N = G.shape[0]
    E = enumerate_error_sequences(N, N if w_max is None else w_max, budget)
    w = np.count_nonzero(E, axis=1)
    d2 = np.einsum("ij,jk,ik->i", E, G, E) / (2 * Eb)
    weight = w / (2.0**w * N)
    ebn0 = np.atleast_1d(db_to_linear(ebn0_db))
    return np.array([np.sum(weight * qfunc(np.sqrt(np.maximum(d2, 0.0) * g))) for g in ebn0])


# ---------------------------------------------------------------------------
# exhaustive oracles


def _all_symbols(N: int) -> np.ndarray:
    if N > 20:
        raise ValueError(f"brute force over 2^{N} sequences is not supported (N <= 20)")
    return 1.0 - 2.0 * ((np.arange(2**N)[:, None] >> np.arange(N)[None, ::-1]) & 1)


def brute_force_map(y, G, sigma2, prior=None, known=None):
    """Exact APP LLRs by summing over all ``2^N`` sequences (Ungerboeck metric)."""
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    Y = y[None] if squeeze else y
    N = Y.shape[1]
    X = _all_symbols(N)
    if known is not None:
        known = np.asarray(known, dtype=float)
        ok = np.all((known == 0) | (X == known), axis=1)
        X = X[ok]
    quad = 0.5 * np.einsum("ij,jk,ik->i", X, G, X)
    P = np.zeros_like(Y) if prior is None else np.asarray(prior, dtype=float).reshape(Y.shape)
    sigma2 = np.asarray(sigma2, dtype=float)
    s2 = sigma2[:, None] if sigma2.ndim else sigma2
    metric = (Y @ X.T - quad) / s2 + 0.5 * P @ X.T  # (B, 2^N)
    out = np.empty_like(Y)
    for i in range(N):
        plus = X[:, i] > 0
        with np.errstate(invalid="ignore"):
            out[:, i] = logsumexp(metric[:, plus], axis=1) - logsumexp(metric[:, ~plus], axis=1)
    return out[0] if squeeze else out


def brute_force_ml(y, G):
    """Maximum-likelihood sequence ``argmax_x x^T y - x^T G x / 2``."""
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    Y = y[None] if squeeze else y
    X = _all_symbols(Y.shape[1])
    quad = 0.5 * np.einsum("ij,jk,ik->i", X, G, X)
    best = np.argmax(Y @ X.T - quad, axis=1)
    out = X[best]
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# convolutional-code error events


@dataclass(frozen=True)
class CcErrorEvent:
    info_errors: int  # I
    length: int  # trellis steps L
    weight: int  # code Hamming weight W
    pattern: tuple[int, ...]  # code-bit error pattern over the event

    @property
    def key(self):
        return (self.weight, self.info_errors, self.length)


def cc_error_events(spec: CcSpec = CcSpec(), w_max: int = 8, K_prime: int = 12) -> list[CcErrorEvent]:
    """Single error events with code weight ``<= w_max`` fitting in ``K_prime`` info bits.

    Depth-first search from the zero state: diverge with input 1, stop at the
    first return to the zero state.
    """
    events = []

    def dfs(state, steps, w, i, pattern):
        if steps and state == 0:
            events.append(CcErrorEvent(i, steps, w, tuple(pattern)))
            return
        for b in (1,) if steps == 0 else (0, 1):
            if b and steps >= K_prime:
                continue
            ns, out = spec.step(state, b)
            nw = w + sum(out)
            if nw > w_max:
                continue
            dfs(ns, steps + 1, nw, i + b, pattern + list(out))

    dfs(0, 0, 0, 0, [])
    events.sort(key=lambda ev: (ev.weight, ev.length, ev.pattern))
    return events


def cc_error_events_pairwise(spec: CcSpec = CcSpec(), w_max: int = 8, K_prime: int = 7) -> list[CcErrorEvent]:
    """Same events found by comparing every pair of terminated codewords.

    Makes no linearity assumption; exponential in ``K_prime``.
    """
    m = spec.memory
    words = []
    for bits in itertools.product((0, 1), repeat=K_prime):
        s, states, outs = 0, [0], []
        for b in list(bits) + [0] * m:
            s, out = spec.step(s, b)
            states.append(s)
            outs.append(out)
        words.append((np.array(bits + (0,) * m), np.array(states), np.array(outs)))
    found = set()
    for (b1, s1, o1), (b2, s2, o2) in itertools.combinations(words, 2):
        diff = np.flatnonzero(s1 != s2)
        if diff.size == 0 or diff[-1] - diff[0] + 1 != diff.size:
            continue
        start, stop = diff[0] - 1, diff[-1]  # steps start .. stop inclusive
        pattern = (o1[start : stop + 1] ^ o2[start : stop + 1]).ravel()
        w = int(pattern.sum())
        if w > w_max:
            continue
        i = int(np.sum(b1[start : stop + 1] != b2[start : stop + 1]))
        found.add(CcErrorEvent(i, stop - start + 1, w, tuple(int(v) for v in pattern)))
    return sorted(found, key=lambda ev: (ev.weight, ev.length, ev.pattern))


# ---------------------------------------------------------------------------
# FTN distance spectrum


@dataclass
class DistanceSpectrum:
    """Grouped FTN error sequences of one Hamming weight.

    ``multiplicity[o]`` counts sequences (support placement and signs) sharing
    ``(d2[o], d2_ope[o])``; ``total`` is ``C(N, w) 2^w``.  Entries coming from
    sampled cluster shapes carry fractional multiplicities and are counted in
    ``sampled``.
    """

    w: int
    N: int
    L_E: int
    window: int
    multiplicity: np.ndarray
    d2: np.ndarray
    d2_ope: np.ndarray
    sigma2_rl: np.ndarray
    total: float
    sampled: int = 0
    extra: dict = field(default_factory=dict)

    def expected(self, f) -> float:
        """Average of ``f(d2, d2_ope, sigma2_rl)`` over all ``total`` sequences."""
        return float(np.sum(self.multiplicity * f(self.d2, self.d2_ope, self.sigma2_rl)) / self.total)


def _gap_vectors(k: int, L: int, max_span: int | None = None) -> np.ndarray:
    """All gap vectors in {1..L}^(k-1), optionally restricted to span <= max_span."""
    rows = np.zeros((1, 0), dtype=int)
    for _ in range(k - 1):
        gaps = np.arange(1, L + 1)
        rows = np.concatenate(
            [np.repeat(rows, L, axis=0), np.tile(gaps, len(rows))[:, None]], axis=1
        )
        if max_span is not None:
            rows = rows[rows.sum(axis=1) <= max_span]
    return rows


def _count_long(k: int, L: int, min_span: int) -> int:
    """Number of gap vectors in {1..L}^(k-1) with span >= min_span."""
    ways = {0: 1}
    for _ in range(k - 1):
        nxt: dict[int, int] = {}
        for s, n in ways.items():
            for gap in range(1, L + 1):
                nxt[s + gap] = nxt.get(s + gap, 0) + n
        ways = nxt
    return sum(n for s, n in ways.items() if s >= min_span)


def _cluster_forms(gaps: np.ndarray, signs: np.ndarray, g_full: np.ndarray, g_trunc: np.ndarray):
    """Unnormalized ``e^T G e`` and ``e^T F e`` for clusters given row-wise.

    ``gaps``: (n, k-1) ints; ``signs``: (n, k) of ±1.
    """
    n, km1 = gaps.shape
    k = km1 + 1
    pos = np.concatenate([np.zeros((n, 1), dtype=int), np.cumsum(gaps, axis=1)], axis=1)
    a = np.full(n, 4.0 * k * g_full[0])
    b = np.full(n, 4.0 * k * g_trunc[0])
    for i in range(k):
        for j in range(i + 1, k):
            lag = pos[:, j] - pos[:, i]
            gf = np.where(lag < len(g_full), g_full[np.minimum(lag, len(g_full) - 1)], 0.0)
            gt = np.where(lag < len(g_trunc), g_trunc[np.minimum(lag, len(g_trunc) - 1)], 0.0)
            ss = 8.0 * signs[:, i] * signs[:, j]  # 2 e_i e_j
            a += gf * ss
            b += gt * ss
    return a, b


def _group(keys: np.ndarray, weights: np.ndarray, decimals: int = 9):
    r = np.round(keys, decimals)
    uniq, inv = np.unique(r, axis=0, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=weights, minlength=len(uniq))


def _cluster_table(k: int, g_full, g_trunc, L: int, window: int, budget: int, samples: int, rng):
    """Grouped (span, e^T G e, e^T F e) multiplicities of single clusters of size k.

    Counts include both global signs.  When enumerating every shape would
    exceed ``budget``, shapes with span < ``window`` are still enumerated and
    the longer ones are sampled uniformly and reweighted.
    """
    signs = np.array([(1.0,) + s for s in itertools.product((1.0, -1.0), repeat=k - 1)])
    exhaustive = L ** (k - 1) * len(signs) <= budget
    gaps = _gap_vectors(k, L, None if exhaustive else window - 1)
    G_rows = np.repeat(gaps, len(signs), axis=0)
    S_rows = np.tile(signs, (len(gaps), 1))
    wts = np.full(len(G_rows), 2.0)
    n_sampled = 0
    if not exhaustive:
        n_long = _count_long(k, L, window)
        if n_long:
            draws, have = [], 0
            while have < samples:
                cand = rng.integers(1, L + 1, size=(4 * samples, k - 1))
                cand = cand[cand.sum(axis=1) >= window]
                draws.append(cand)
                have += len(cand)
            long_gaps = np.concatenate(draws)[:samples]
            long_signs = signs[rng.integers(0, len(signs), size=samples)]
            G_rows = np.concatenate([G_rows, long_gaps])
            S_rows = np.concatenate([S_rows, long_signs])
            wts = np.concatenate([wts, np.full(samples, 2.0 * n_long * len(signs) / samples)])
            n_sampled = samples
    a, b = _cluster_forms(G_rows, S_rows, g_full, g_trunc)
    keys = np.column_stack([G_rows.sum(axis=1), a, b])
    uniq, mult = _group(keys, wts)
    return uniq, mult, n_sampled


def _partitions(n: int, largest: int | None = None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for k in range(min(n, largest), 0, -1):
        for rest in _partitions(n - k, k):
            yield (k,) + rest


def ftn_error_spectrum(w: int, taps, L_E: int, N: int, Eb: float = 1.0, window: int = 18,
                       budget: int = 300_000, samples: int = 20_000, rng=None) -> DistanceSpectrum:
    """Distance spectrum of all weight-``w`` FTN error sequences in a length-``N`` block.

    A placement splits into clusters: maximal runs whose consecutive gaps are at
    most ``L``.  Clusters do not interact, so the quadratic forms add up, and
    placements with the same cluster shapes and total span ``S`` number
    ``C(N - 1 - S - (c - 1)(L + 1) + c, c)`` for ``c`` clusters.
    """
    g_full = taps.taps if isinstance(taps, IsiProfile) else np.asarray(taps, dtype=float)
    L = len(g_full) - 1
    if L_E > L:
        raise ValueError("L_E exceeds the number of taps")
    g_trunc = g_full[: L_E + 1]
    if w > N:
        raise ValueError("weight exceeds block length")
    rng = np.random.default_rng(0) if rng is None else rng
    if L == 0:
        tables = {1: (np.array([[0, 4.0 * g_full[0], 4.0 * g_full[0]]]), np.array([2.0]), 0)}
    else:
        tables = {}
    n_sampled = 0
    keys_all, mult_all = [], []
    for parts in _partitions(w):
        if L == 0 and len(parts) != w:
            continue
        c = len(parts)
        orderings = math.factorial(c)
        for k in set(parts):
            orderings //= math.factorial(parts.count(k))
        acc_keys = np.zeros((1, 3))
        acc_mult = np.ones(1)
        for k in parts:
            if k not in tables:
                tables[k] = _cluster_table(k, g_full, g_trunc, L, window, budget, samples, rng)
                n_sampled += tables[k][2]
            tk, tm, _ = tables[k]
            keys = (acc_keys[:, None, :] + tk[None, :, :]).reshape(-1, 3)
            mult = (acc_mult[:, None] * tm[None, :]).ravel()
            acc_keys, acc_mult = _group(keys, mult)
        S = acc_keys[:, 0]
        top = N - 1 - S - (c - 1) * (L + 1) + c
        place = np.array([comb(int(t), c, exact=True) if t >= c else 0 for t in top], dtype=float)
        keys_all.append(acc_keys[:, 1:])
        mult_all.append(acc_mult * place * orderings)
    uniq, mult = _group(np.concatenate(keys_all), np.concatenate(mult_all))
    keep = mult > 0
    uniq, mult = uniq[keep], mult[keep]
    d2 = uniq[:, 0] / (2 * Eb)
    d2_ope = uniq[:, 1] / (2 * Eb)
    s_rl = (0.5 * (uniq[:, 0] - uniq[:, 1])) ** 2 / (2 * Eb)
    total = float(comb(N, w, exact=True)) * 2.0**w
    return DistanceSpectrum(w, N, L_E, window, mult, d2, d2_ope, s_rl, total, n_sampled)


def window_spectrum(w: int, taps, L_E: int, W: int, Eb: float = 1.0):
    """Exhaustive spectrum of weight-``w`` sequences whose support lies in one
    length-``W`` window starting at the first error.

    Returns ``(rows, groups, G, F)`` where ``rows`` holds every enumerated
    sequence (one per global-sign pair), ``groups`` maps ``(d2, d2_ope)`` to its
    members and ``G``, ``F`` are the window's full and truncated Gram matrices.
    """
    if W < w:
        raise ValueError("window shorter than the error weight")
    g = taps.taps if isinstance(taps, IsiProfile) else np.asarray(taps, dtype=float)
    n = max(W, len(g))
    from scipy.linalg import toeplitz

    col = np.zeros(n)
    col[: len(g)] = g[:n]
    G = toeplitz(col)[:W, :W]
    F = np.where(np.abs(np.subtract.outer(np.arange(W), np.arange(W))) <= L_E, G, 0.0)
    rows = []
    for rest in itertools.combinations(range(1, W), w - 1):
        pos = (0,) + rest
        for s in itertools.product((2.0, -2.0), repeat=w - 1):
            e = np.zeros(W)
            e[list(pos)] = (2.0,) + s
            rows.append(e)
    rows = np.array(rows)
    groups: dict = {}
    for e in rows:
        d2, d2o, _ = distances(e, G, F, Eb)
        groups.setdefault((round(d2, 9), round(d2o, 9)), []).append(e)
    return rows, groups, G, F


# ---------------------------------------------------------------------------
# coded bounds


@dataclass(frozen=True)
class BoundConfig:
    K: int = 123
    N: int = 250
    L_E: int = 3
    w_min: int = 5
    w_max: int = 8
    K_prime: int = 12
    window: int = 18
    pad: int = 0  # known symbols at each block end (truncated-BCJR termination)

    @property
    def n_tx(self) -> int:
        return self.N + 2 * self.pad

    @property
    def rate(self) -> float:
        return self.K / self.n_tx

    @property
    def Eb(self) -> float:
        return 1.0 / self.rate


def event_spectra(cfg: BoundConfig, taps, events, rng=None, **kw) -> dict[int, DistanceSpectrum]:
    """One spectrum per Hamming weight present among ``events``."""
    weights = sorted({ev.weight for ev in events if cfg.w_min <= ev.weight <= cfg.w_max})
    return {w: ftn_error_spectrum(w, taps, cfg.L_E, cfg.N, cfg.Eb, cfg.window, rng=rng, **kw) for w in weights}


def coded_bound(cfg: BoundConfig, events, spectra, ebn0_db, full_taps: bool = False):
    """Approximate coded BER from single CC error events.

    ``full_taps=True`` uses plain pairwise probabilities on ``d2``; otherwise
    the finite-tap probability with ``d2_ope`` and ``sigma2_rl`` is used.
    """
    positions_base = math.floor(cfg.n_tx * cfg.rate + 1e-9)  # N R / K_b with K_b = 1
    ebn0 = np.atleast_1d(db_to_linear(ebn0_db))
    out = np.zeros(len(ebn0))
    for ev in events:
        if not cfg.w_min <= ev.weight <= cfg.w_max:
            continue
        sp = spectra[ev.weight]
        positions = max(positions_base - ev.length + 1, 0)
        coef = ev.info_errors / (cfg.n_tx * cfg.rate) * positions
        for n, g in enumerate(ebn0):
            if full_taps:
                p = sp.expected(lambda d2, d2o, s: pairwise_error_prob(d2, g))
            else:
                p = sp.expected(lambda d2, d2o, s: finite_tap_error_prob(d2, d2o, s, g, cfg.Eb))
            out[n] += coef * p
    return out
