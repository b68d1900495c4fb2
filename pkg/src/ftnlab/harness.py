"""Monte Carlo BER sweeps, flat-file configuration and model persistence."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .channel import PulseSpec, isi_taps, noise_variance
from .cnn import LAYER_NAMES, CnnHyper, CnnModel
from .trainer import TrainConfig
from .turbo import DETECTORS, CodedFtnLink, TurboConfig, turbo_equalize

log = logging.getLogger(__name__)

MODEL_FORMAT = "ftnlab-dlspda"
MODEL_VERSION = 1
MIN_REPORTED_ERRORS = 100
CSV_COLUMNS = ("snr_db", "bits", "bit_errors", "blocks", "block_errors", "ber")
# SNR = +inf sends without noise; detectors then assume this E_b/N_0 so that
# LLRs stay inside the clip range where interference cancellation still works
NOISELESS_DETECTOR_SNR_DB = 15.0


class ConfigError(ValueError):
    pass


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_flat(text: str) -> dict[str, str]:
    """``key = value`` lines to a dict; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    tau: float = 0.6
    alpha: float = 0.3
    L: int = 11
    L_E: int = 3
    K: int = 123
    coded: bool = True
    detector: str = "spda"
    rho_max: int = 15
    m_max: int = 6
    snr_db: tuple[float, ...] = (6.0,)
    max_blocks: int = 10000
    min_block_errors: int = MIN_REPORTED_ERRORS
    seed: int = 0
    interleaver_seed: int = 0
    model: str = ""
    batch_blocks: int = 50

    _PARSERS = {"snr_db": _floats, "coded": _bool, "model": str, "detector": str}

    def __post_init__(self):
        self.snr_db = tuple(float(v) for v in self.snr_db)
        try:
            PulseSpec(self.tau, self.alpha, self.L)
            TurboConfig(self.rho_max, self.detector, self.L_E, self.m_max, interleaver_seed=self.interleaver_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.detector not in DETECTORS:
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.L_E > self.L:
            raise ConfigError(f"L_E={self.L_E} exceeds the tap span L={self.L}")
        if self.K < 1 or self.max_blocks < 1 or self.batch_blocks < 1:
            raise ConfigError("K, max_blocks and batch_blocks must be >= 1")
        if self.min_block_errors < MIN_REPORTED_ERRORS:
            raise ConfigError(f"min_block_errors must be >= {MIN_REPORTED_ERRORS}")
        if not self.snr_db:
            raise ConfigError("snr_db is empty")

    @property
    def N(self) -> int:
        return 2 * (self.K + 2) if self.coded else self.K

    @classmethod
    def parse(cls, text: str, **overrides) -> "ExperimentConfig":
        """Build from flat ``key = value`` text; keyword overrides win over the text."""
        known = {f.name: f for f in fields(cls)}
        values = parse_flat(text)
        n_text = values.pop("N", None)
        for key in values:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        parsed = {}
        for key, val in values.items():
            if not isinstance(val, str):
                parsed[key] = val
                continue
            conv = cls._PARSERS.get(key) or {"int": int, "float": float}[known[key].type]
            try:
                parsed[key] = conv(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        cfg = cls(**parsed)
        if n_text is not None and int(n_text) != cfg.N:
            raise ConfigError(f"N={n_text} is inconsistent with K={cfg.K} (N would be {cfg.N})")
        return cfg

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        return cls.parse(_read(path), **overrides)

    def dump(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "snr_db":
                v = ", ".join(repr(s) for s in v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    def link(self) -> CodedFtnLink:
        profile = isi_taps(PulseSpec(self.tau, self.alpha, self.L))
        tc = TurboConfig(self.rho_max, self.detector, self.L_E, self.m_max, interleaver_seed=self.interleaver_seed)
        return CodedFtnLink(self.K, profile, tc, coded=self.coded)


_TRAIN_KEYS = {
    "snr_range": lambda v: tuple(_floats(v)),
    "omega": lambda v: tuple(_floats(v)),
    "lr": float, "gamma": float, "tau": float, "alpha": float,
    "batches_per_snr": int, "V": int, "m_max": int, "n_batches": int, "seed": int,
    "L": int, "L_E": int, "K": int, "interleaver_seed": int, "chunk": int, "window": int,
    "grad_check": _bool,
}
_HYPER_KEYS = {"n1": int, "l1": int, "s1": int, "n2": int, "l2": int, "s2": int, "std1": float, "std2": float}


def parse_train_config(text: str, **overrides) -> TrainConfig:
    """Flat training config; ``L`` is the tap span and CNN sizes use ``n1 l1 s1 n2 l2 s2 std1 std2``."""
    values = parse_flat(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    kw, hyper = {}, {}
    for key, val in values.items():
        conv = _TRAIN_KEYS.get(key) or _HYPER_KEYS.get(key)
        if conv is None:
            raise ConfigError(f"unknown training key {key!r}")
        try:
            v = conv(val) if isinstance(val, str) else val
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
        if key in _HYPER_KEYS:
            hyper[key] = v
        else:
            kw["span" if key == "L" else key] = v
    if "snr_range" in kw and len(kw["snr_range"]) != 2:
        raise ConfigError("snr_range needs two values")
    try:
        return TrainConfig(hyper=CnnHyper(**hyper), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_train_config(path, **overrides) -> TrainConfig:
    return parse_train_config(_read(path), **overrides)


# ---------------------------------------------------------------- BER sweep


@dataclass
class BerRecord:
    snr_db: float
    bits: int = 0
    bit_errors: int = 0
    blocks: int = 0
    block_errors: int = 0
    runtime: float = 0.0
    censored: bool = True

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    def csv_row(self) -> list[str]:
        return [repr(self.snr_db), str(self.bits), str(self.bit_errors), str(self.blocks),
                str(self.block_errors), repr(self.ber)]


def block_rng(seed: int, snr_index: int, block: int) -> np.random.Generator:
    """Independent stream per (seed, SNR point, block) so results do not depend on batching."""
    return np.random.default_rng(np.random.SeedSequence([seed, snr_index, block]))


def _simulate_blocks(link: CodedFtnLink, det, snr_db: float, si: int, seed: int, start: int, count: int):
    """Bit errors per block for blocks ``start .. start + count - 1``."""
    noiseless = math.isinf(snr_db) and snr_db > 0
    s2 = 0.0 if noiseless else float(noise_variance(snr_db, link.rate))
    bits = np.empty((count, link.K), dtype=np.int64)
    z = np.empty((count, link.M))
    for i in range(count):
        rng = block_rng(seed, si, start + i)
        bits[i] = rng.integers(0, 2, link.K)
        z[i] = rng.standard_normal(link.M)
    x = link.modulate(bits)
    y = x @ link.channel.G + math.sqrt(s2) * (z @ link.channel.sqrt_G)
    s2_det = float(noise_variance(NOISELESS_DETECTOR_SNR_DB, link.rate)) if noiseless else s2
    decided = turbo_equalize(y, s2_det, link, detector=det)
    return (decided != bits).sum(axis=1)


def run_ber_sweep(cfg: ExperimentConfig, model: CnnModel | None = None, out=None, progress=None) -> list[BerRecord]:
    """Simulate each SNR point until ``min_block_errors`` or ``max_blocks``.

    ``out`` (a text stream) receives the CSV incrementally: a ``#``-prefixed
    copy of the resolved config, the header, then one row per finished point.
    Censored points are preceded by a ``# censored`` comment line.
    """
    if cfg.detector == "dlspda" and model is None:
        if not cfg.model:
            raise ModelError("detector dlspda needs a trained model: set 'model = <path>' or pass --model")
        model = load_model(cfg.model, N=cfg.N, L_E=cfg.L_E, m_max=cfg.m_max)
    link = cfg.link()
    det = link.detector(model)
    writer = None
    if out is not None:
        for line in cfg.dump().splitlines():
            out.write(f"# {line}\n")
        out.write(f"# rate = {link.rate!r}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        out.flush()

    records = []
    for si, snr in enumerate(cfg.snr_db):
        rec = BerRecord(snr)
        t0 = time.perf_counter()
        done = False
        while not done and rec.blocks < cfg.max_blocks:
            count = min(cfg.batch_blocks, cfg.max_blocks - rec.blocks)
            errs = _simulate_blocks(link, det, snr, si, cfg.seed, rec.blocks, count)
            # accumulate in block order so early stopping is independent of batch size
            for e in errs:
                rec.blocks += 1
                rec.bits += link.K
                rec.bit_errors += int(e)
                rec.block_errors += int(e > 0)
                if rec.block_errors >= cfg.min_block_errors:
                    done = True
                    break
            if progress is not None:
                progress(rec)
        rec.runtime = time.perf_counter() - t0
        rec.censored = rec.block_errors < cfg.min_block_errors
        if rec.censored:
            log.warning("SNR %s dB: only %d block errors in %d blocks (censored)", snr, rec.block_errors, rec.blocks)
        if writer is not None:
            if rec.censored:
                out.write(f"# censored snr_db = {snr!r}: {rec.block_errors} block errors < {cfg.min_block_errors}\n")
            writer.writerow(rec.csv_row())
            out.flush()
        records.append(rec)
    return records


def sweep_csv(cfg: ExperimentConfig, model: CnnModel | None = None) -> str:
    buf = io.StringIO()
    run_ber_sweep(cfg, model, out=buf)
    return buf.getvalue()


# ---------------------------------------------------------------- persistence


def save_model(model: CnnModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "N": model.N,
        "L_E": model.L_E,
        "m_max": model.m_max,
        "hyper": asdict(model.hyper),
        "metadata": model.metadata,
        "arrays": [
            {"name": name, "shape": list(arr.shape), "values": np.asarray(arr, dtype=float).ravel().tolist()}
            for name, arr in model.named_arrays()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path, N: int | None = None, L_E: int | None = None, m_max: int | None = None) -> CnnModel:
    """Read a model and check it against the expected detector dimensions."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is truncated or corrupt: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelError(f"{path} is not a DL-SPDA model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelError(f"model version {doc.get('version')} is not supported (expected {MODEL_VERSION})")
    try:
        hyper = CnnHyper(**doc["hyper"])
        mN, mL, mm = int(doc["N"]), int(doc["L_E"]), int(doc["m_max"])
        arrays = {a["name"]: np.array(a["values"], dtype=float).reshape(a["shape"]) for a in doc["arrays"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"model file {path} is malformed: {exc}") from exc

    if N is not None and N != mN:
        raise ModelError(
            f"shape mismatch in dense layer: model was trained for N={mN} "
            f"(dense_w {tuple(hyper.shapes(mN)['dense_w'])}), configuration needs N={N}"
        )
    if L_E is not None and L_E != mL:
        raise ModelError(f"shape mismatch in coupling: model has L_E={mL}, configuration needs L_E={L_E}")
    if m_max is not None and m_max != mm:
        raise ModelError(f"model has m_max={mm} unfolded iterations, configuration needs {m_max}")

    shapes = hyper.shapes(mN)
    layers = []
    for m in range(mm):
        layer = {}
        for name in LAYER_NAMES:
            key = f"iter{m}.{name}"
            if key not in arrays:
                raise ModelError(f"model file {path} lacks array {key}")
            if arrays[key].shape != shapes[name]:
                raise ModelError(f"shape mismatch for {key}: file has {arrays[key].shape}, expected {shapes[name]}")
            layer[name] = arrays[key]
        layers.append(layer)
    coupling = arrays.get("coupling")
    if coupling is None or coupling.shape != (mm, mL):
        raise ModelError(f"coupling array missing or not of shape {(mm, mL)}")
    return CnnModel(hyper, mN, mL, mm, layers, coupling, dict(doc.get("metadata") or {}))
