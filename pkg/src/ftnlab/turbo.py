"""Truncated-BCJR FTN detector and turbo equalization against the CC decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import FtnChannel, IsiProfile, bpsk, build_gram
from .cnn import CnnModel
from .coding import CcSpec, Interleaver, cc_bcjr_decode, cc_encode
from .spda import FgConfig, channel_llr, detect

MAX_TRELLIS_STATES = 1 << 14
DETECTORS = ("spda", "dlspda", "bcjr", "threshold")


def truncated_bcjr_detect(y, prior, taps, sigma2, L_E: int, known=None, max_states: int = MAX_TRELLIS_STATES):
    """Log-MAP detection over the ``2^L_E``-state Ungerboeck trellis.

    The branch metric for symbol ``x_n`` given state ``(x_{n-1}, .., x_{n-L_E})`` is
    ``(x_n (y_n - sum_l g_l x_{n-l}) - g_0 / 2) / sigma^2 + x_n prior_n / 2``.
    Symbols before the block start do not exist and contribute nothing.

    Parameters
    ----------
    y, prior : (M,) or (B, M)
    taps : one-sided taps ``g_0..``; only ``g_0..g_{L_E}`` are used.
    known : optional (M,) array of {0, +1, -1}; nonzero entries pin the symbol.

    Returns
    -------
    Extrinsic LLRs ``APP - prior``, same shape as ``y``.
    """
    n_states = 1 << L_E
    if n_states > max_states:
        raise ValueError(f"L_E={L_E} needs {n_states} trellis states, above the budget of {max_states}")
    g = taps.taps if isinstance(taps, IsiProfile) else np.asarray(taps, dtype=float)
    g = np.concatenate([g, np.zeros(max(0, L_E + 1 - len(g)))])[: L_E + 1]
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    Y = y[None] if squeeze else y
    B, M = Y.shape
    P = np.zeros_like(Y) if prior is None else np.asarray(prior, dtype=float).reshape(B, M)
    sigma2 = np.asarray(sigma2, dtype=float)
    s2 = sigma2[:, None] if sigma2.ndim else sigma2
    kn = np.zeros(M) if known is None else np.asarray(known, dtype=float)

    if L_E == 0:
        app = 2.0 * Y / s2 + P
        app = np.where(kn > 0, np.inf, np.where(kn < 0, -np.inf, app))
        ext = app - P
        return ext[0] if squeeze else ext

    # chunk to bound the stored forward/backward metrics
    chunk = max(1, int(4e6 // (M * n_states)))
    if B > chunk:
        parts = [
            truncated_bcjr_detect(Y[i : i + chunk], P[i : i + chunk], g, sigma2[i : i + chunk] if sigma2.ndim else sigma2,
                                  L_E, known, max_states)
            for i in range(0, B, chunk)
        ]
        ext = np.concatenate(parts)
        return ext[0] if squeeze else ext

    states = np.arange(n_states)
    # bit k of a state is 1 when x_{n-1-k} = -1
    past = 1.0 - 2.0 * ((states[:, None] >> np.arange(L_E)[None, :]) & 1)  # (S, L_E)

    def interference(n):
        valid = (np.arange(1, L_E + 1) <= n).astype(float)
        return past @ (g[1:] * valid)  # (S,)

    def gamma(n):
        """(B, S, 2) metric of leaving each state with x_n = +1 (b=0) or -1 (b=1)."""
        r = Y[:, n, None] - interference(n)[None, :]
        base = np.stack([r, -r], axis=-1) / (s2[..., None] if np.ndim(s2) else s2)
        base = base - 0.5 * g[0] / (s2[..., None] if np.ndim(s2) else s2)
        base = base + 0.5 * P[:, n, None, None] * np.array([1.0, -1.0])
        if kn[n] > 0:
            base[..., 1] = -np.inf
        elif kn[n] < 0:
            base[..., 0] = -np.inf
        return base

    # leaving state s with bit b lands in ((s << 1) | b) mod S, so the two
    # predecessors of 2k + b are k and k + S/2: gathers become reshapes
    h = n_states // 2
    gammas = [gamma(n) for n in range(M)]
    alpha = np.empty((B, M + 1, n_states))
    alpha[:, 0] = 0.0
    for n in range(M):
        c = alpha[:, n, :, None] + gammas[n]
        nxt = np.logaddexp(c[:, :h], c[:, h:]).reshape(B, n_states)
        alpha[:, n + 1] = nxt - nxt.max(axis=1, keepdims=True)

    beta = np.zeros((B, n_states))
    app = np.empty((B, M))
    for n in range(M - 1, -1, -1):
        bb = beta.reshape(B, h, 2)
        u = gammas[n] + np.concatenate([bb, bb], axis=1)  # (B, S, 2)
        t = alpha[:, n, :, None] + u
        m = t.max(axis=1)  # (B, 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            lse = np.where(np.isfinite(m), m + np.log(np.exp(t - m[:, None, :]).sum(axis=1)), -np.inf)
        app[:, n] = lse[:, 0] - lse[:, 1]
        nb = np.logaddexp(u[..., 0], u[..., 1])
        beta = nb - nb.max(axis=1, keepdims=True)
    ext = app - P
    return ext[0] if squeeze else ext


@dataclass
class TurboConfig:
    rho_max: int = 15
    detector: str = "spda"
    L_E: int = 3
    m_max: int = 6
    spec: CcSpec = field(default_factory=CcSpec)
    interleaver_seed: int = 0

    def __post_init__(self):
        if self.rho_max < 1:
            raise ValueError("rho_max must be >= 1")
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; choose from {DETECTORS}")


class CodedFtnLink:
    """Everything fixed per configuration: code, interleaver, channel, rate.

    ``K`` information bits give ``N = 2 (K + 2)`` code bits.  The truncated-BCJR
    detector additionally sends ``L_E`` known ``+1`` symbols at each end.  With
    ``coded=False`` the information bits are sent directly (``N = K``).
    """

    def __init__(self, K: int, profile: IsiProfile, cfg: TurboConfig, coded: bool = True):
        self.K = K
        self.cfg = cfg
        self.profile = profile
        self.coded = coded
        self.N = cfg.spec.code_length(K) if coded else K
        self.pad = cfg.L_E if cfg.detector == "bcjr" else 0
        self.M = self.N + 2 * self.pad
        self.interleaver = Interleaver(self.N, cfg.interleaver_seed) if coded else Interleaver.identity(self.N)
        self.channel = FtnChannel(build_gram(profile, self.M))
        self.known = np.zeros(self.M)
        if self.pad:
            self.known[: self.pad] = 1.0
            self.known[-self.pad :] = 1.0
        self.fg = FgConfig(self.N, cfg.L_E, cfg.m_max, use_nn=cfg.detector == "dlspda")

    @property
    def rate(self) -> float:
        """Effective rate: information bits per transmitted symbol."""
        return self.K / self.M

    def modulate(self, bits):
        """Info bits (…, K) to transmitted symbols (…, M)."""
        c = self.interleaver.interleave(cc_encode(bits, self.cfg.spec)) if self.coded else np.asarray(bits)
        x = bpsk(c)
        if self.pad:
            ones = np.ones(x.shape[:-1] + (self.pad,))
            x = np.concatenate([ones, x, ones], axis=-1)
        return x

    def detector(self, model: CnnModel | None = None) -> Callable:
        """``f(y, prior, sigma2) -> extrinsic`` on the N data symbols."""
        cfg = self.cfg
        if cfg.detector == "bcjr":
            def run(y, prior, sigma2):
                P = np.zeros(np.shape(y))
                P[..., self.pad : self.pad + self.N] = prior
                ext = truncated_bcjr_detect(y, P, self.profile, sigma2, cfg.L_E, self.known)
                return ext[..., self.pad : self.pad + self.N]
            return run
        if cfg.detector == "threshold":
            return lambda y, prior, sigma2: channel_llr(y, sigma2)
        if cfg.detector == "dlspda" and model is None:
            raise ValueError("the dlspda detector needs a trained model")

        def run(y, prior, sigma2):
            return detect(y, prior, self.profile, sigma2, self.fg, model if cfg.detector == "dlspda" else None)

        return run


def turbo_equalize(y, sigma2, link: CodedFtnLink, model: CnnModel | None = None, detector=None,
                   rho_max: int | None = None, history: bool = False):
    """Iterate detector and decoder, exchanging extrinsic LLRs only.

    Returns hard info-bit decisions (…, K); with ``history=True`` a list with the
    decisions after every turbo iteration.
    """
    det = detector if detector is not None else link.detector(model)
    rho_max = link.cfg.rho_max if rho_max is None else rho_max
    y = np.asarray(y, dtype=float)
    prior = np.zeros(y.shape[:-1] + (link.N,))
    if not link.coded:
        out = (det(y, prior, sigma2) < 0).astype(np.int8)
        return [out] if history else out
    decisions = []
    for _ in range(rho_max):
        ext_det = det(y, prior, sigma2)
        app_info, ext_dec = cc_bcjr_decode(link.interleaver.deinterleave(ext_det), spec=link.cfg.spec)
        prior = link.interleaver.interleave(ext_dec)
        decisions.append((app_info < 0).astype(np.int8))
    return decisions if history else decisions[-1]
