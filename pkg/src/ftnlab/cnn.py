"""CNN function node: two linear conv layers and a dense layer with -ReLU output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm, truncnorm

from . import autodiff as ad


@dataclass(frozen=True)
class CnnHyper:
    n1: int = 3  # filters
    l1: int = 8  # filter length
    s1: int = 5  # stride
    n2: int = 1
    l2: int = 3
    s2: int = 1
    std1: float = 0.03
    std2: float = 0.03

    def __post_init__(self):
        if min(self.n1, self.l1, self.s1, self.n2, self.l2, self.s2) < 1:
            raise ValueError("filter counts, sizes and strides must be >= 1")

    def conv1_len(self, N: int) -> int:
        return -(-N // self.s1)

    def conv2_len(self, N: int) -> int:
        return -(-self.conv1_len(N) // self.s2)

    def shapes(self, N: int) -> dict[str, tuple[int, ...]]:
        flat = self.conv2_len(N) * self.n2
        return {
            "conv1_w": (self.n1, self.l1, 1),
            "conv1_b": (self.n1,),
            "conv2_w": (self.n2, self.l2, self.n1),
            "conv2_b": (self.n2,),
            "dense_w": (flat, N),
            "dense_b": (N,),
        }

    def param_count(self, N: int) -> int:
        """Trainable CNN parameters for one iteration."""
        return (
            self.n1 * self.l1 + self.n1
            + self.n2 * self.l2 * self.n1 + self.n2
            + self.conv2_len(N) * self.n2 * N + N
        )


LAYER_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")


@dataclass
class CnnModel:
    """Unfolded DL-SPDA parameters.

    ``layers[m]`` holds the CNN weights for message-passing iteration ``m``;
    ``coupling[m, d - 1]`` scales the edge coupling of tap offset ``d`` in
    iteration ``m``.
    """

    hyper: CnnHyper
    N: int
    L_E: int
    m_max: int
    layers: list[dict[str, np.ndarray]]
    coupling: np.ndarray
    metadata: dict = field(default_factory=dict)

    def param_count(self) -> int:
        return self.m_max * self.hyper.param_count(self.N) + self.coupling.size

    def named_arrays(self):
        for m, layer in enumerate(self.layers):
            for name in LAYER_NAMES:
                yield f"iter{m}.{name}", layer[name]
        yield "coupling", self.coupling

    def copy(self) -> "CnnModel":
        return CnnModel(
            self.hyper, self.N, self.L_E, self.m_max,
            [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
            self.coupling.copy(), dict(self.metadata),
        )

    @classmethod
    def zeros(cls, hyper: CnnHyper, N: int, L_E: int, m_max: int) -> "CnnModel":
        shapes = hyper.shapes(N)
        layers = [{k: np.zeros(s) for k, s in shapes.items()} for _ in range(m_max)]
        return cls(hyper, N, L_E, m_max, layers, np.ones((m_max, L_E)))


def _scale_for_std(std: float, bound: float) -> float:
    """Scale of a normal truncated to ``[-bound, bound]`` whose std is ``std``."""

    def trunc_std(scale):
        c = bound / scale
        z = 2.0 * norm.cdf(c) - 1.0
        return scale * math.sqrt(1.0 - 2.0 * c * norm.pdf(c) / z)

    return brentq(lambda s: trunc_std(s) - std, std * 1e-3, std * 1e3)


def truncated_normal(rng: np.random.Generator, std: float, size) -> np.ndarray:
    """Samples bounded by ``±2 std`` whose standard deviation is ``std``."""
    bound = 2.0 * std
    scale = _scale_for_std(std, bound)
    c = bound / scale
    return truncnorm.rvs(-c, c, scale=scale, size=size, random_state=rng)


def init_params(hyper: CnnHyper, N: int, L_E: int, m_max: int, rng: np.random.Generator) -> CnnModel:
    model = CnnModel.zeros(hyper, N, L_E, m_max)
    for layer in model.layers:
        layer["conv1_w"] = truncated_normal(rng, hyper.std1, layer["conv1_w"].shape)
        layer["conv2_w"] = truncated_normal(rng, hyper.std2, layer["conv2_w"].shape)
        layer["dense_w"] = truncated_normal(rng, hyper.std2, layer["dense_w"].shape)
    return model


def cnn_forward(u, layer: dict, hyper: CnnHyper, return_preactivation: bool = False):
    """Map the ``u`` LLRs (shape (N,) or (B, N)) to the ``v`` LLRs.

    ``layer`` values may be arrays or :class:`~ftnlab.autodiff.Tensor` objects.
    """
    squeeze = np.ndim(ad.value(u)) == 1
    if squeeze:
        u = ad.reshape(u, (1, -1))
    B, N = ad.value(u).shape
    if layer["dense_b"].shape[-1] != N:
        raise ValueError(f"input length {N} does not match dense layer width {layer['dense_b'].shape[-1]}")
    h = ad.reshape(u, (B, N, 1))
    h = ad.conv1d(h, layer["conv1_w"], layer["conv1_b"], hyper.s1)
    h = ad.conv1d(h, layer["conv2_w"], layer["conv2_b"], hyper.s2)
    h = ad.reshape(h, (B, -1))
    z = ad.dense(h, layer["dense_w"], layer["dense_b"])
    out = z if return_preactivation else ad.neg_relu(z)
    if squeeze:
        out = ad.reshape(out, (N,))
    return out


@dataclass(frozen=True)
class Complexity:
    name: str
    additions: int
    lookups: int


def complexity_report(N: int, L_E: int, hyper: CnnHyper = CnnHyper()) -> list[Complexity]:
    """Per-iteration additions and look-up table accesses."""
    c1 = math.ceil(N / hyper.s1)
    c2 = math.ceil(c1 / hyper.s2)
    shared = c2 * (hyper.l2 * hyper.n1 * hyper.n2 + 1) + c2 * hyper.n2 * N
    extra_add = 2 * N + c1 * (hyper.l1 * hyper.n1 + 1) + shared
    extra_lut = c1 * hyper.l1 * hyper.n1 + shared
    return [
        Complexity("log-MAP", N * (15 * 2**L_E + 9), N * (10 * 2**L_E - 4)),
        Complexity("SPDA", N * (32 * L_E + 6), 4 * N * L_E),
        Complexity("DL-SPDA extra", extra_add, extra_lut),
    ]
