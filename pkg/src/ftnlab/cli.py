"""Command-line entry point: ``python -m ftnlab <command>``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .analysis import BoundConfig, cc_error_events, coded_bound, event_spectra
from .channel import PulseSpec, isi_taps
from .cnn import CnnHyper, complexity_report
from .harness import (ConfigError, ExperimentConfig, ModelError, load_train_config, parse_train_config,
                      run_ber_sweep, save_model)
from .trainer import ConvergenceMonitor, TrainingDiverged, train
from .verify import run_all

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_MODEL, EXIT_NUMERICAL = 0, 2, 3, 4, 5


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_taps(args) -> int:
    profile = isi_taps(PulseSpec(args.tau, args.alpha, args.span))
    print("index,value")
    for i, g in enumerate(profile.two_sided(), start=-profile.L):
        print(f"{i},{g:.17g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    overrides = {
        "detector": args.detector, "L_E": args.taps, "rho_max": args.turbo, "tau": args.tau,
        "snr_db": tuple(_floats(args.snr)) if args.snr else None, "model": args.model,
        "max_blocks": args.max_blocks, "seed": args.seed, "coded": False if args.uncoded else None,
    }
    cfg = ExperimentConfig.load(args.config, **overrides) if args.config else ExperimentConfig.parse("", **overrides)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        run_ber_sweep(cfg, out=out)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {"n_batches": args.batches, "seed": args.seed}
    cfg = load_train_config(args.config, **overrides) if args.config else parse_train_config("", **overrides)
    monitor = ConvergenceMonitor(cfg.window)

    def progress(b, loss):
        if not args.quiet and (b + 1) % args.log_every == 0:
            print(f"batch {b + 1}/{cfg.n_batches} loss {loss:.6f}", file=sys.stderr, flush=True)

    model = train(cfg, monitor=monitor, progress=progress)
    model.metadata["losses"] = monitor.losses
    save_model(model, args.out)
    if args.loss_csv:
        monitor.write_csv(args.loss_csv)
    print(f"saved {args.out}; stable from window {model.metadata['stable_from_window']}")
    return EXIT_OK


def _bound_setup(args):
    profile = isi_taps(PulseSpec(args.tau, args.alpha, args.span))
    L_E = profile.L if args.full_taps else args.taps
    cfg = BoundConfig(K=args.K, N=2 * (args.K + 2), L_E=L_E, w_min=5, w_max=args.wmax,
                      window=args.window, pad=args.pad)
    events = [e for e in cc_error_events(w_max=args.wmax, K_prime=cfg.K_prime) if e.weight >= cfg.w_min]
    spectra = event_spectra(cfg, profile, events, rng=np.random.default_rng(args.seed))
    return cfg, events, spectra


def cmd_bound(args) -> int:
    cfg, events, spectra = _bound_setup(args)
    grid = _floats(args.snr_grid)
    vals = coded_bound(cfg, events, spectra, grid, full_taps=args.full_taps)
    print(f"# rate = {cfg.rate!r}")
    print("snr_db,pb_bound")
    for s, v in zip(grid, vals):
        print(f"{s!r},{v:.10e}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg, events, spectra = _bound_setup(args)
    print("event_id,multiplicity,d2,d2_ope,sigma_rl")
    for i, ev in enumerate(events):
        sp = spectra[ev.weight]
        order = np.lexsort((sp.d2_ope, sp.d2))[: args.limit]
        for o in order:
            print(f"{i},{sp.multiplicity[o]:.6f},{sp.d2[o]:.12g},{sp.d2_ope[o]:.12g},{sp.sigma2_rl[o]:.12g}")
    return EXIT_OK


def cmd_complexity(args) -> int:
    rows = complexity_report(args.n, args.taps, CnnHyper())
    print("detector,additions,lookups")
    for r in rows:
        print(f"{r.name},{r.additions},{r.lookups}")
    spda, extra = rows[1], rows[2]
    print(f"DL-SPDA,{spda.additions + extra.additions},{spda.lookups + extra.lookups}")
    m = args.iterations
    print(f"DL-SPDA x{m},{m * (spda.additions + extra.additions)},{m * (spda.lookups + extra.lookups)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    ok = True
    for name, passed, detail in run_all(args.quick):
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftnlab", description="Coded FTN detection laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def pulse(sp, taps_default=None):
        sp.add_argument("--tau", type=float, default=0.6)
        sp.add_argument("--alpha", type=float, default=0.3)
        sp.add_argument("--span", type=int, default=11)
        if taps_default is not None:
            sp.add_argument("--taps", type=int, default=taps_default, help="L_E, taps modelled per side")

    sp = sub.add_parser("taps", help="print the ISI tap table as CSV")
    pulse(sp)
    sp.set_defaults(func=cmd_taps)

    sp = sub.add_parser("simulate", help="Monte Carlo BER sweep")
    sp.add_argument("--config")
    sp.add_argument("--detector", choices=("spda", "dlspda", "bcjr", "threshold"))
    sp.add_argument("--taps", type=int, help="L_E")
    sp.add_argument("--turbo", type=int, help="rho_max")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--snr", help="comma-separated Eb/N0 values in dB")
    sp.add_argument("--model")
    sp.add_argument("--max-blocks", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--uncoded", action="store_true")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train a DL-SPDA model")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--loss-csv")
    sp.add_argument("--batches", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--log-every", type=int, default=10)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    def bound_args(sp):
        pulse(sp, 3)
        sp.add_argument("--K", type=int, default=123)
        sp.add_argument("--wmax", type=int, default=8)
        sp.add_argument("--window", type=int, default=18)
        sp.add_argument("--pad", type=int, default=0, help="known symbols per block end")
        sp.add_argument("--full-taps", action="store_true")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("bound", help="coded BER bound")
    bound_args(sp)
    sp.add_argument("--snr-grid", default="4,5,6,7,8")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("spectrum", help="grouped FTN distance spectra per CC error event")
    bound_args(sp)
    sp.set_defaults(wmax=5)
    sp.add_argument("--limit", type=int, default=20, help="smallest-distance groups shown per event")
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("complexity", help="per-iteration operation counts")
    sp.add_argument("--n", type=int, default=250)
    sp.add_argument("--taps", type=int, default=3)
    sp.add_argument("--iterations", type=int, default=6)
    sp.set_defaults(func=cmd_complexity)

    sp = sub.add_parser("verify", help="run the oracle suites")
    sp.add_argument("--quick", action="store_true")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
