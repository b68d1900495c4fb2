"""Sum-product detection on the Ungerboeck factor graph, in the LLR domain.

Messages are stored per tap offset ``d`` in ``[-L_E..-1, 1..L_E]`` as length-N
arrays: ``q[d][i]`` is the message from the pairwise node linking symbols
``i`` and ``i + d`` into symbol ``i``; ``p[d][i]`` travels the other way.
Entries whose partner falls outside the block stay at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .channel import IsiProfile
from .cnn import CnnModel, cnn_forward

LLR_CLIP = 50.0


@dataclass(frozen=True)
class FgConfig:
    N: int
    L_E: int
    m_max: int = 6
    use_nn: bool = False

    def __post_init__(self):
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")
        if self.L_E < 0:
            raise ValueError("L_E must be >= 0")

    @property
    def offsets(self) -> list[int]:
        return list(range(-self.L_E, 0)) + list(range(1, self.L_E + 1))


def channel_llr(y, sigma2):
    """``2 y / sigma^2`` (the ``|x|^2`` term cancels for BPSK)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("noise variance must be positive for LLR computation")
    y = np.asarray(y, dtype=float)
    if sigma2.ndim == 1 and y.ndim == 2:
        sigma2 = sigma2[:, None]
    return 2.0 * y / sigma2


def edge_message(p, theta, scale=1.0):
    """Pairwise-node output LLR for incoming LLR ``p`` and coupling ``theta * scale``.

    ``theta = G_ij / sigma^2``; ``scale = 1`` gives the plain sum-product rule.
    """
    return ad.pair_llr(p, ad.mul(theta, scale))


def _taps(taps, L_E):
    g = taps.taps if isinstance(taps, IsiProfile) else np.asarray(taps, dtype=float)
    if len(g) <= L_E:
        g = np.concatenate([g, np.zeros(L_E + 1 - len(g))])
    return g


def couplings(taps, sigma2, L_E) -> np.ndarray:
    """``theta_d = g_d / sigma^2`` for ``d = 1..L_E``; shape (L_E,) or (B, L_E)."""
    g = _taps(taps, L_E)[1 : L_E + 1]
    sigma2 = np.asarray(sigma2, dtype=float)
    return g / sigma2[..., None] if sigma2.ndim else g / sigma2


def unfolded_forward(T, O, theta, cfg: FgConfig, scales=None, layers=None, hyper=None, clip=LLR_CLIP,
                     return_raw: bool = False):
    """Run ``cfg.m_max`` flooding iterations.

    Parameters
    ----------
    T, O : (B, N) channel and prior LLRs.
    theta : (B, L_E) or (L_E,) couplings ``g_d / sigma^2``.
    scales : (m_max, L_E) edge scales, array or Tensor; ``None`` means all ones.
    layers : per-iteration CNN parameter dicts; ``None`` disables the NN node.

    Returns the list of APP LLRs after each iteration; with ``return_raw`` also
    the unclipped final APP.

    Messages and reported APPs are clipped to ``±clip``; the running sum
    ``O + T + v + sum q`` is formed before clipping so that a large channel
    LLR can still be cancelled by the interference messages.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = np.broadcast_to(theta, (np.shape(T)[0], cfg.L_E))
    base = ad.add(O, T)
    offsets = cfg.offsets
    q = {d: np.zeros(np.shape(T)) for d in offsets}
    v = np.zeros(np.shape(T))
    Q = base
    trajectory = []
    for m in range(cfg.m_max):
        p = {d: ad.clip(ad.sub(Q, q[d]), clip) for d in offsets}
        new_q = {}
        for d in offsets:
            th = theta[:, abs(d) - 1 : abs(d)]
            s = 1.0 if scales is None else ad.take(scales, (m, abs(d) - 1))
            new_q[d] = ad.clip(edge_message(ad.shift(p[-d], d), th, s), clip)
        q = new_q
        if layers is not None:
            u = q[offsets[0]] if offsets else np.zeros(np.shape(T))
            for d in offsets[1:]:
                u = ad.add(u, q[d])
            v = cnn_forward(u, layers[m], hyper)
        Q = ad.add(base, v)
        for d in offsets:
            Q = ad.add(Q, q[d])
        trajectory.append(ad.clip(Q, clip))
    return (trajectory, Q) if return_raw else trajectory


def detect(y, prior, taps, sigma2, cfg: FgConfig, model: CnnModel | None = None, trajectory: bool = False):
    """Extrinsic LLRs ``APP - prior`` of the (DL-)SPDA for ``y`` of shape (N,) or (B, N).

    The extrinsic is clipped to the LLR range; ``trajectory`` holds the clipped APPs.
    """
    if cfg.use_nn and model is None:
        raise ValueError("use_nn requires a CnnModel")
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    Y = y[None] if squeeze else y
    O = np.zeros_like(Y) if prior is None else np.asarray(prior, dtype=float).reshape(Y.shape)
    T = channel_llr(Y, sigma2)
    s2 = np.asarray(sigma2, dtype=float)
    theta = couplings(taps, s2 if s2.ndim else float(s2), cfg.L_E)
    scales, layers, hyper = None, None, None
    if model is not None:
        if model.L_E != cfg.L_E or model.m_max != cfg.m_max:
            raise ValueError(
                f"model built for L_E={model.L_E}, m_max={model.m_max}; detector wants L_E={cfg.L_E}, m_max={cfg.m_max}"
            )
        scales = model.coupling
        if cfg.use_nn:
            layers, hyper = model.layers, model.hyper
    traj, raw = unfolded_forward(T, O, theta, cfg, scales, layers, hyper, return_raw=True)
    # the prior may exceed the clip range, so subtract it before clipping
    ext = np.clip(raw - O, -LLR_CLIP, LLR_CLIP)
    if squeeze:
        ext = ext[0]
        traj = [t[0] for t in traj]
    return (ext, traj) if trajectory else ext
