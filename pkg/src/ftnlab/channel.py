"""FTN channel model: RRC autocorrelation taps, Gram matrices and colored noise."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PulseSpec:
    """Root-raised-cosine pulse sent every ``tau * T`` seconds."""

    tau: float = 0.6
    alpha: float = 0.3
    span: int = 11
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.span < 0:
            raise ValueError(f"span must be >= 0, got {self.span}")


@dataclass(frozen=True)
class IsiProfile:
    """One-sided ISI taps ``g_0 .. g_L``; ``g_{-i} = g_i``."""

    taps: np.ndarray

    @property
    def L(self) -> int:
        return len(self.taps) - 1

    def tap(self, i: int) -> float:
        i = abs(i)
        return float(self.taps[i]) if i <= self.L else 0.0

    def two_sided(self) -> np.ndarray:
        """Taps ordered ``g_{-L} .. g_L``."""
        return np.concatenate([self.taps[:0:-1], self.taps])


def raised_cosine(t, alpha: float, T: float = 1.0) -> np.ndarray:
    """Raised-cosine pulse, i.e. the autocorrelation of a unit-energy RRC pulse."""
    t = np.asarray(t, dtype=float) / T
    out = np.sinc(t)
    if alpha == 0.0:
        return out
    den = 1.0 - (2.0 * alpha * t) ** 2
    singular = np.isclose(den, 0.0, atol=1e-12)
    safe = np.where(singular, 1.0, den)
    out = out * np.cos(np.pi * alpha * t) / safe
    # limit at t = T/(2 alpha)
    limit = np.pi / 4.0 * np.sinc(1.0 / (2.0 * alpha))
    return np.where(singular, limit, out)


def isi_taps(pulse: PulseSpec) -> IsiProfile:
    """Sample the RRC autocorrelation at multiples of ``tau * T``."""
    i = np.arange(pulse.span + 1)
    g = raised_cosine(i * pulse.tau * pulse.T, pulse.alpha, pulse.T)
    g[0] = 1.0
    return IsiProfile(g)


def build_gram(profile: IsiProfile, N: int) -> np.ndarray:
    """Dense symmetric Toeplitz matrix with ``G[i, j] = g_{i-j}``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    col = np.zeros(N)
    k = min(N, profile.L + 1)
    col[:k] = profile.taps[:k]
    return toeplitz(col)


def truncate_gram(G: np.ndarray, L_E: int, L: int | None = None) -> np.ndarray:
    """Keep the diagonals with ``|i - j| <= L_E``; zero the rest."""
    if L is not None and L_E > L:
        raise ValueError(f"invalid truncation: L_E={L_E} exceeds L={L}")
    if L_E < 0:
        raise ValueError("L_E must be >= 0")
    n = G.shape[0]
    idx = np.arange(n)
    band = np.abs(idx[:, None] - idx[None, :]) <= L_E
    return np.where(band, G, 0.0)


@dataclass
class FtnChannel:
    """Colored-noise channel ``y = G x + eta`` with ``E[eta eta^T] = sigma^2 G``.

    ``G`` is repaired by clamping negative eigenvalues to zero before the
    symmetric square root is taken; the largest clamped magnitude is kept in
    ``clamp``.
    """

    G: np.ndarray
    sqrt_G: np.ndarray = field(init=False, repr=False)
    clamp: float = field(init=False)

    def __post_init__(self):
        w, V = np.linalg.eigh(self.G)
        neg = w.min()
        self.clamp = float(max(0.0, -neg))
        if self.clamp > 0.0:
            log.info("Gram matrix indefinite; clamped eigenvalue of magnitude %.3e", self.clamp)
        w = np.clip(w, 0.0, None)
        self.sqrt_G = (V * np.sqrt(w)) @ V.T

    @property
    def N(self) -> int:
        return self.G.shape[0]

    def transmit(self, x: np.ndarray, sigma2: float | np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Pass ``x`` (shape ``(N,)`` or ``(B, N)``) through the channel."""
        sigma2 = np.asarray(sigma2, dtype=float)
        if np.any(sigma2 < 0):
            raise ValueError("noise variance must be non-negative")
        x = np.asarray(x, dtype=float)
        clean = x @ self.G  # G symmetric
        z = rng.standard_normal(x.shape)
        sigma = np.sqrt(sigma2)
        if sigma.ndim == 1 and x.ndim == 2:
            sigma = sigma[:, None]
        return clean + sigma * (z @ self.sqrt_G)


def transmit(G, x, sigma2, rng) -> np.ndarray:
    """Convenience wrapper; prefer reusing an :class:`FtnChannel` in loops."""
    ch = G if isinstance(G, FtnChannel) else FtnChannel(np.asarray(G, dtype=float))
    return ch.transmit(x, sigma2, rng)


def bpsk(bits: np.ndarray) -> np.ndarray:
    """``x = (-1)^c``."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def noise_variance(ebn0_db, rate: float = 1.0) -> np.ndarray:
    """Per-sample variance ``N0/2`` for unit symbol energy and ``Es = R Eb``."""
    ebn0 = 10.0 ** (np.asarray(ebn0_db, dtype=float) / 10.0)
    return 1.0 / (2.0 * rate * ebn0)
