"""(7,5) convolutional code, interleaver and log-MAP decoder.

LLRs are positive when bit 0 (symbol +1) is more likely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEG_INF = -np.inf


@dataclass(frozen=True)
class CcSpec:
    """Feedforward rate-1/2 convolutional code given by octal generators."""

    generators: tuple[int, int] = (0o7, 0o5)
    memory: int = 2

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    @property
    def k_b(self) -> int:
        return 1

    @property
    def n_b(self) -> int:
        return len(self.generators)

    @property
    def rate(self) -> float:
        return self.k_b / self.n_b

    def code_length(self, K: int) -> int:
        return (K + self.memory) * self.n_b

    def info_length(self, N: int) -> int:
        K, rem = divmod(N, self.n_b)
        if rem:
            raise ValueError(f"code length {N} is not a multiple of {self.n_b}")
        return K - self.memory

    def step(self, state: int, bit: int) -> tuple[int, tuple[int, ...]]:
        """Return ``(next_state, output_bits)``.

        The register holds ``[b_t, b_{t-1}, ..., b_{t-m}]`` with the newest bit
        as the generator MSB; ``state`` packs ``b_{t-1}`` as its MSB.
        """
        reg = (bit << self.memory) | state
        out = tuple(bin(reg & g).count("1") & 1 for g in self.generators)
        return reg >> 1, out


@dataclass(frozen=True)
class Trellis:
    prev_state: np.ndarray  # (branches,)
    next_state: np.ndarray
    bit: np.ndarray
    out: np.ndarray  # (branches, n_b)

    @classmethod
    def of(cls, spec: CcSpec) -> "Trellis":
        rows = []
        for s in range(spec.n_states):
            for b in (0, 1):
                ns, out = spec.step(s, b)
                rows.append((s, ns, b, out))
        return cls(
            prev_state=np.array([r[0] for r in rows]),
            next_state=np.array([r[1] for r in rows]),
            bit=np.array([r[2] for r in rows]),
            out=np.array([r[3] for r in rows]),
        )


def cc_encode(bits: np.ndarray, spec: CcSpec = CcSpec()) -> np.ndarray:
    """Encode and terminate with ``memory`` zero tail bits.

    Accepts ``(K,)`` or ``(B, K)`` arrays of 0/1.
    """
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape[-1] < 1:
        raise ValueError("need at least one information bit")
    tail = np.zeros(bits.shape[:-1] + (spec.memory,), dtype=np.int8)
    u = np.concatenate([bits, tail], axis=-1)
    streams = []
    for g in spec.generators:
        taps = [(g >> (spec.memory - d)) & 1 for d in range(spec.memory + 1)]
        acc = np.zeros_like(u)
        for d, t in enumerate(taps):
            if t:
                acc[..., d:] ^= u[..., : u.shape[-1] - d]
        streams.append(acc)
    return np.stack(streams, axis=-1).reshape(u.shape[:-1] + (-1,))


def encoder_final_state(bits: np.ndarray, spec: CcSpec = CcSpec()) -> int:
    state = 0
    for b in list(bits) + [0] * spec.memory:
        state, _ = spec.step(state, int(b))
    return state


def _maxstar(a, b, exact):
    return np.logaddexp(a, b) if exact else np.maximum(a, b)


def _reduce(x, axis, exact):
    if exact:
        m = np.max(x, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))
    return np.max(x, axis=axis)


def cc_bcjr_decode(channel_llr, prior_llr=None, spec: CcSpec = CcSpec(), exact: bool = True):
    """Forward-backward decoding over the terminated trellis.

    Parameters
    ----------
    channel_llr : array, shape (N,) or (B, N)
        Code-bit LLRs from the detector.
    prior_llr : array, shape (K,) or (B, K), optional
        Information-bit priors; tail bits are known zeros.
    exact : bool
        ``True`` uses the Jacobian logarithm (log-MAP); ``False`` drops the
        correction term (max-log-MAP).

    Returns
    -------
    app_info : (…, K) APP LLRs of the information bits.
    ext_code : (…, N) code-bit extrinsic LLRs, ``APP - channel_llr``.
    """
    L = np.asarray(channel_llr, dtype=float)
    squeeze = L.ndim == 1
    if squeeze:
        L = L[None]
    B, N = L.shape
    nb = spec.n_b
    K = spec.info_length(N)
    if prior_llr is None:
        La = np.zeros((B, K))
    else:
        La = np.asarray(prior_llr, dtype=float).reshape(B, -1)
        if La.shape[1] != K:
            raise ValueError(f"prior length {La.shape[1]} does not match K={K}")
    steps = K + spec.memory
    tr = Trellis.of(spec)
    S = spec.n_states
    sgn_out = 1.0 - 2.0 * tr.out  # (br, nb)
    sgn_bit = 1.0 - 2.0 * tr.bit

    Lc = L.reshape(B, steps, nb)
    gamma = 0.5 * np.einsum("btk,rk->btr", Lc, sgn_out)
    gamma[:, :K] += 0.5 * La[:, :, None] * sgn_bit[None, None, :]
    gamma[:, K:, tr.bit == 1] = NEG_INF

    into = [np.flatnonzero(tr.next_state == s) for s in range(S)]

    alpha = np.full((B, steps + 1, S), NEG_INF)
    alpha[:, 0, 0] = 0.0
    for t in range(steps):
        m = alpha[:, t, tr.prev_state] + gamma[:, t]
        for s in range(S):
            alpha[:, t + 1, s] = _reduce(m[:, into[s]], 1, exact)
        alpha[:, t + 1] -= alpha[:, t + 1].max(axis=1, keepdims=True)

    beta = np.full((B, steps + 1, S), NEG_INF)
    beta[:, steps, 0] = 0.0
    out_of = [np.flatnonzero(tr.prev_state == s) for s in range(S)]
    for t in range(steps - 1, -1, -1):
        m = beta[:, t + 1, tr.next_state] + gamma[:, t]
        for s in range(S):
            beta[:, t, s] = _reduce(m[:, out_of[s]], 1, exact)
        beta[:, t] -= beta[:, t].max(axis=1, keepdims=True)

    total = alpha[:, :-1, tr.prev_state] + gamma + beta[:, 1:, tr.next_state]  # (B, steps, br)
    app_info = _reduce(total[:, :K][..., tr.bit == 0], 2, exact) - _reduce(total[:, :K][..., tr.bit == 1], 2, exact)
    app_code = np.empty((B, steps, nb))
    for k in range(nb):
        app_code[:, :, k] = _reduce(total[..., tr.out[:, k] == 0], 2, exact) - _reduce(
            total[..., tr.out[:, k] == 1], 2, exact
        )
    app_code = app_code.reshape(B, N)
    ext = app_code - L
    if squeeze:
        return app_info[0], ext[0]
    return app_info, ext


@dataclass
class Interleaver:
    """Seeded uniform random permutation; ``interleave(v)[k] = v[perm[k]]``."""

    N: int
    seed: int | None = 0
    perm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed is None:
            self.perm = np.arange(self.N)
        else:
            self.perm = np.random.default_rng(self.seed).permutation(self.N)
        self._inv = np.argsort(self.perm)

    @classmethod
    def identity(cls, N: int) -> "Interleaver":
        return cls(N, seed=None)

    def _check(self, v):
        v = np.asarray(v)
        if v.shape[-1] != self.N:
            raise ValueError(f"length {v.shape[-1]} does not match interleaver length {self.N}")
        return v

    def interleave(self, v):
        return self._check(v)[..., self.perm]

    def deinterleave(self, v):
        return self._check(v)[..., self._inv]
