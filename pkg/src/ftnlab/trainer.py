"""Off-line training of the unfolded DL-SPDA with compatible (prior-aware) batches."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from . import autodiff as ad
from .channel import IsiProfile, PulseSpec, isi_taps, noise_variance
from .cnn import LAYER_NAMES, CnnHyper, CnnModel, init_params
from .spda import FgConfig, channel_llr, couplings, unfolded_forward
from .turbo import CodedFtnLink, TurboConfig

log = logging.getLogger(__name__)

# Omega contains I = 1, whose sigma is unbounded; it is mapped to this ceiling.
MI_CEILING = 0.9999
RMSPROP_DECAY = 0.9
RMSPROP_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------- J-function


def j_value(sigma: float) -> float:
    """Mutual information between a bit and a consistent Gaussian LLR of std ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return 0.0
    mu = 0.5 * sigma * sigma

    def f(l):
        return math.exp(-0.5 * ((l - mu) / sigma) ** 2) * np.logaddexp(0.0, -l)

    lo, hi = mu - 12.0 * sigma, mu + 12.0 * sigma
    val, _ = quad(f, lo, hi, points=[0.0] if lo < 0.0 < hi else None, limit=200, epsabs=1e-13, epsrel=1e-12)
    return float(1.0 - val / (sigma * math.sqrt(2.0 * math.pi)) / math.log(2.0))


def j_inverse(I: float, tol: float = 1e-6) -> float:
    """Bisection for ``sigma`` with ``|j_value(sigma) - I| < tol``."""
    if not 0.0 <= I < 1.0:
        raise ValueError(f"mutual information must lie in [0, 1), got {I}")
    if I == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while j_value(hi) < I:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        jm = j_value(mid)
        if abs(jm - I) < tol:
            return mid
        if jm < I:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mutual_information(llr, x) -> float:
    """Empirical ``1 - E[log2(1 + exp(-x L))]`` for symbols ``x`` in {+1, -1}."""
    return float(1.0 - np.mean(np.logaddexp(0.0, -np.asarray(x) * np.asarray(llr))) / math.log(2.0))


def sample_extrinsic(x, sigma_e: float, rng: np.random.Generator) -> np.ndarray:
    """Consistent Gaussian LLRs: mean ``x sigma_e^2 / 2``, variance ``sigma_e^2``."""
    if sigma_e < 0:
        raise ValueError("sigma_e must be >= 0")
    x = np.asarray(x, dtype=float)
    z = rng.standard_normal(x.shape)
    return x * (0.5 * sigma_e * sigma_e) + sigma_e * z


# ---------------------------------------------------------------- batches


@dataclass
class TrainConfig:
    snr_range: tuple[float, float] = (6.0, 8.0)
    lr: float = 1e-3
    batches_per_snr: int = 60  # channel realizations per batch
    V: int = 12
    omega: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    gamma: float = 0.9
    m_max: int = 6
    n_batches: int = 300
    seed: int = 0
    tau: float = 0.6
    alpha: float = 0.3
    span: int = 11
    L_E: int = 2
    K: int = 123
    hyper: CnnHyper = field(default_factory=CnnHyper)
    interleaver_seed: int = 0
    chunk: int = 600  # samples per forward/backward pass
    window: int = 1000  # batches per convergence window
    grad_check: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if any(not 0.0 <= w <= 1.0 for w in self.omega) or not self.omega:
            raise ValueError("omega must be a non-empty subset of [0, 1]")
        if self.snr_range[0] > self.snr_range[1]:
            raise ValueError("snr_range must be (low, high)")
        if min(self.batches_per_snr, self.V, self.m_max, self.n_batches, self.chunk, self.window) < 1:
            raise ValueError("counts must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")

    @property
    def samples_per_batch(self) -> int:
        return self.batches_per_snr * len(self.omega) * self.V

    def profile(self) -> IsiProfile:
        return isi_taps(PulseSpec(self.tau, self.alpha, self.span))

    def link(self) -> CodedFtnLink:
        tc = TurboConfig(detector="dlspda", L_E=self.L_E, m_max=self.m_max, interleaver_seed=self.interleaver_seed)
        return CodedFtnLink(self.K, self.profile(), tc)


@dataclass
class TrainingBatch:
    """``psi`` channel LLRs, ``upsilon`` sampled prior LLRs, ``labels`` interleaved code bits."""

    psi: np.ndarray
    upsilon: np.ndarray
    labels: np.ndarray
    sigma2: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return self.psi + self.upsilon

    def __len__(self):
        return self.psi.shape[0]


def extrinsic_sigmas(omega) -> np.ndarray:
    return np.array([j_inverse(min(w, MI_CEILING)) for w in omega])


def build_batch(cfg: TrainConfig, rng: np.random.Generator, link: CodedFtnLink | None = None,
                sigmas: np.ndarray | None = None) -> TrainingBatch:
    """One batch: every channel realization is reused ``|omega| * V`` times with fresh priors."""
    link = cfg.link() if link is None else link
    sigmas = extrinsic_sigmas(cfg.omega) if sigmas is None else sigmas
    R = cfg.batches_per_snr
    snr = rng.uniform(*cfg.snr_range, size=R)
    s2 = noise_variance(snr, link.rate)
    bits = rng.integers(0, 2, size=(R, link.K))
    x = link.modulate(bits)
    y = link.channel.transmit(x, s2, rng)
    psi = channel_llr(y, s2)

    reps = len(sigmas) * cfg.V
    X = np.repeat(x, reps, axis=0)
    se = np.tile(np.repeat(sigmas, cfg.V), R)[:, None]
    ups = X * (0.5 * se * se) + se * rng.standard_normal(X.shape)
    return TrainingBatch(
        psi=np.repeat(psi, reps, axis=0),
        upsilon=ups,
        labels=(X < 0).astype(np.int8),
        sigma2=np.repeat(s2, reps),
    )


# ---------------------------------------------------------------- loss and gradients


def cross_entropy(llr, labels):
    """Mean sigmoid cross-entropy of LLRs (positive favors bit 0) against bits."""
    sign = 1.0 - 2.0 * np.asarray(labels, dtype=float)
    loss = ad.softplus(ad.mul(llr, -sign))
    return ad.mul(ad.total(loss), 1.0 / sign.size)


def multi_loss(trajectory, labels, gamma: float):
    """``sum_m gamma^(m_max - m) CE(labels, Q^m)`` over iterations ``m = 1..m_max``."""
    m_max = len(trajectory)
    out = 0.0
    for m, Q in enumerate(trajectory, start=1):
        out = ad.add(out, ad.mul(cross_entropy(Q, labels), gamma ** (m_max - m)))
    return out


def _tensors(model: CnnModel):
    layers = [{k: ad.Tensor(v, name=f"iter{m}.{k}") for k, v in layer.items()} for m, layer in enumerate(model.layers)]
    scales = ad.Tensor(model.coupling, name="coupling")
    return layers, scales


def _forward(model: CnnModel, T, O, sigma2, taps, layers=None, scales=None):
    cfg = FgConfig(model.N, model.L_E, model.m_max, use_nn=True)
    theta = couplings(taps, np.asarray(sigma2, dtype=float), model.L_E)
    layers = model.layers if layers is None else layers
    scales = model.coupling if scales is None else scales
    return unfolded_forward(T, O, theta, cfg, scales, layers, model.hyper)


def loss_value(model: CnnModel, batch: TrainingBatch, taps, gamma: float, scale: float = 1.0) -> float:
    traj = _forward(model, batch.psi, batch.upsilon, batch.sigma2, taps)
    return float(multi_loss(traj, batch.labels, gamma)) * scale


def loss_and_grad(model: CnnModel, batch: TrainingBatch, taps, gamma: float, scale: float = 1.0):
    """Loss and its gradient for every trainable array, keyed like ``CnnModel.named_arrays``."""
    layers, scales = _tensors(model)
    traj = _forward(model, batch.psi, batch.upsilon, batch.sigma2, taps, layers, scales)
    loss = ad.mul(multi_loss(traj, batch.labels, gamma), scale)
    ad.backward(loss)
    grads = {}
    for m, layer in enumerate(layers):
        for k in LAYER_NAMES:
            g = layer[k].grad
            grads[f"iter{m}.{k}"] = np.zeros_like(layer[k].value) if g is None else g
    grads["coupling"] = np.zeros_like(scales.value) if scales.grad is None else scales.grad
    return float(loss.value), grads


def _slot(model: CnnModel, name: str) -> np.ndarray:
    if name == "coupling":
        return model.coupling
    it, k = name.split(".")
    return model.layers[int(it[4:])][k]


def gradient_check(N: int = 20, m_max: int = 2, L_E: int = 2, n_params: int = 50, step: float = 1e-4,
                   seed: int = 0, hyper: CnnHyper | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The instance is random: taps, noise, priors and a CNN with larger-than-default
    weights so that the ReLU output is active.
    """
    rng = np.random.default_rng(seed)
    hyper = hyper or CnnHyper(std1=0.3, std2=0.3)
    taps = np.concatenate([[1.0], rng.uniform(-0.5, 0.5, L_E)])
    model = init_params(hyper, N, L_E, m_max, rng)
    for layer in model.layers:
        layer["conv1_b"] = rng.normal(0, 0.1, layer["conv1_b"].shape)
        layer["dense_b"] = rng.normal(0.5, 0.2, layer["dense_b"].shape)
    model.coupling = rng.uniform(0.5, 1.5, model.coupling.shape)
    B = 4
    x = np.where(rng.random((B, N)) < 0.5, 1.0, -1.0)
    s2 = rng.uniform(0.5, 1.0, B)
    batch = TrainingBatch(
        psi=2.0 * (x + rng.normal(0, 1, (B, N))) / s2[:, None],
        upsilon=sample_extrinsic(x, 1.0, rng),
        labels=(x < 0).astype(np.int8),
        sigma2=s2,
    )
    _, grads = loss_and_grad(model, batch, taps, 0.9)
    names = [n for n, _ in model.named_arrays()]
    sizes = np.array([_slot(model, n).size for n in names])
    picks = rng.choice(sizes.sum(), size=min(n_params, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        arr = _slot(model, names[j])
        idx = np.unravel_index(flat - offsets[j], arr.shape)
        keep = arr[idx]
        arr[idx] = keep + step
        up = loss_value(model, batch, taps, 0.9)
        arr[idx] = keep - step
        dn = loss_value(model, batch, taps, 0.9)
        arr[idx] = keep
        fd = (up - dn) / (2.0 * step)
        g = grads[names[j]][idx]
        den = max(abs(fd), abs(g))
        if den > 1e-9:
            worst = max(worst, abs(fd - g) / den)
    return worst


# ---------------------------------------------------------------- optimizer and monitor


class RmsProp:
    def __init__(self, lr: float, decay: float = RMSPROP_DECAY, eps: float = RMSPROP_EPS):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.ms: dict[str, np.ndarray] = {}

    def step(self, model: CnnModel, grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            ms = self.ms.get(name)
            ms = (1.0 - self.decay) * g * g if ms is None else self.decay * ms + (1.0 - self.decay) * g * g
            self.ms[name] = ms
            arr = _slot(model, name)
            arr -= self.lr * g / (np.sqrt(ms) + self.eps)


@dataclass
class ConvergenceMonitor:
    """Window averages of the loss, normalized so that the first window is 1."""

    window: int = 1000
    losses: list[float] = field(default_factory=list)

    def add(self, loss: float):
        self.losses.append(float(loss))

    def averages(self) -> np.ndarray:
        n = len(self.losses) // self.window
        return np.array(self.losses[: n * self.window]).reshape(n, self.window).mean(axis=1) if n else np.zeros(0)

    def xi_avg(self) -> np.ndarray:
        a = self.averages()
        return a / a[0] if a.size else a

    def xi_cg(self) -> np.ndarray:
        """``|(xi_a - xi_{a-1}) / xi_{a-1}|``; the first window has no predecessor and gets NaN."""
        xa = self.xi_avg()
        out = np.full(xa.shape, np.nan)
        out[1:] = np.abs(np.diff(xa) / xa[:-1])
        return out

    def stable_from(self, threshold: float = 0.1) -> int | None:
        """First window after which every relative change stays below ``threshold``."""
        cg = self.xi_cg()
        if cg.size < 2:
            return None
        ok = cg[1:] < threshold
        for a in range(len(ok)):
            if ok[a:].all():
                return a + 1
        return None

    def rows(self):
        for a, (avg, xa, cg) in enumerate(zip(self.averages(), self.xi_avg(), self.xi_cg())):
            yield (a + 1) * self.window, float(avg), float(xa), float(cg)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch_index", "avg_loss", "xi_avg", "xi_cg"])
            for row in self.rows():
                w.writerow([row[0]] + [repr(v) for v in row[1:]])


# ---------------------------------------------------------------- training loop


def train(cfg: TrainConfig, rng: np.random.Generator | None = None, model: CnnModel | None = None,
          monitor: ConvergenceMonitor | None = None, progress=None) -> CnnModel:
    """RMSProp over ``cfg.n_batches`` compatible batches; returns the trained model.

    Gradients of a batch are accumulated chunk by chunk in a fixed order, so the
    result does not depend on ``cfg.chunk`` beyond rounding.
    """
    if cfg.grad_check:
        err = gradient_check()
        if not err < 1e-4:
            raise TrainingDiverged(f"gradient check failed before training: relative error {err:.3e}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    link = cfg.link()
    taps = link.profile
    sigmas = extrinsic_sigmas(cfg.omega)
    if model is None:
        model = init_params(cfg.hyper, link.N, cfg.L_E, cfg.m_max, rng)
    if (model.N, model.L_E, model.m_max) != (link.N, cfg.L_E, cfg.m_max):
        raise ValueError("model shape does not match the training configuration")
    opt = RmsProp(cfg.lr)
    monitor = ConvergenceMonitor(cfg.window) if monitor is None else monitor

    for b in range(cfg.n_batches):
        batch = build_batch(cfg, rng, link, sigmas)
        S = len(batch)
        total_loss, total_grad = 0.0, None
        for lo in range(0, S, cfg.chunk):
            sl = slice(lo, lo + cfg.chunk)
            part = TrainingBatch(batch.psi[sl], batch.upsilon[sl], batch.labels[sl], batch.sigma2[sl])
            w = len(part) / S
            loss, grads = loss_and_grad(model, part, taps, cfg.gamma, scale=w)
            total_loss += loss
            if total_grad is None:
                total_grad = grads
            else:
                for k in total_grad:
                    total_grad[k] += grads[k]
        if not math.isfinite(total_loss) or any(not np.all(np.isfinite(g)) for g in total_grad.values()):
            raise TrainingDiverged(f"non-finite loss or gradient at batch {b} (loss={total_loss})")
        opt.step(model, total_grad)
        monitor.add(total_loss)
        if progress is not None:
            progress(b, total_loss)

    model.metadata.update(
        {
            "optimizer": "rmsprop",
            "rmsprop_decay": RMSPROP_DECAY,
            "rmsprop_eps": RMSPROP_EPS,
            "lr": cfg.lr,
            "gamma": cfg.gamma,
            "omega": list(cfg.omega),
            "mi_ceiling": MI_CEILING,
            "V": cfg.V,
            "batches_per_snr": cfg.batches_per_snr,
            "snr_range": list(cfg.snr_range),
            "n_batches": cfg.n_batches,
            "samples": cfg.n_batches * cfg.samples_per_batch,
            "tau": cfg.tau,
            "alpha": cfg.alpha,
            "span": cfg.span,
            "K": cfg.K,
            "seed": cfg.seed,
            "interleaver_seed": cfg.interleaver_seed,
        }
    )
    model.metadata["stable_from_window"] = monitor.stable_from()
    return model
