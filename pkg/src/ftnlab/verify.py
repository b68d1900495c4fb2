"""Oracle suites behind ``ftnlab verify``: each returns ``(name, passed, detail)``."""

from __future__ import annotations

import numpy as np

from .analysis import brute_force_map, sigma_r_oracle, sigma_rl
from .channel import IsiProfile, PulseSpec, build_gram, isi_taps, truncate_gram
from .trainer import gradient_check, j_inverse, j_value
from .turbo import truncated_bcjr_detect


def check_gradients(quick: bool = False):
    err = gradient_check(n_params=20 if quick else 50)
    return "gradient check (reverse mode vs central differences)", err < 1e-4, f"max relative error {err:.2e}"


def check_residual_isi_bound(quick: bool = False, seed: int = 0):
    """Lower bound on the residual-ISI variance against its Monte Carlo estimate."""
    rng = np.random.default_rng(seed)
    n_seq = 100 if quick else 1000
    N = 40
    fails = 0
    for tau in (0.5, 0.6):
        G = build_gram(isi_taps(PulseSpec(tau, 0.3, 11)), N)
        for L_E in (2, 3):
            F = truncate_gram(G, L_E, 11)
            for _ in range(n_seq // 4):
                w = rng.integers(1, 7)
                e = np.zeros(N)
                pos = rng.choice(N, size=w, replace=False)
                e[pos] = rng.choice([-2.0, 2.0], size=w)
                lo = sigma_rl(e, G, F, 1.0)
                est, se = sigma_r_oracle(e, G, F, 1.0, rng, samples=2000)
                fails += not lo <= est + 3 * se + 1e-12
    return "residual-ISI lower bound vs Monte Carlo", fails == 0, f"{fails} violations"


def check_bcjr(quick: bool = False, seed: int = 0):
    rng = np.random.default_rng(seed)
    g = np.array([1.0, 0.45, -0.12, 0.05])
    N, L_E = 10, 3
    G = build_gram(IsiProfile(g), N)
    worst = 0.0
    for _ in range(3 if quick else 20):
        x = np.where(rng.random(N) < 0.5, 1.0, -1.0)
        s2 = rng.uniform(0.2, 1.0)
        y = G @ x + rng.normal(0, np.sqrt(s2), N)
        prior = rng.normal(0, 1.0, N)
        app = truncated_bcjr_detect(y, prior, g, s2, L_E) + prior
        worst = max(worst, np.max(np.abs(app - brute_force_map(y, G, s2, prior))))
    return "truncated BCJR vs brute-force MAP", worst < 1e-6, f"max deviation {worst:.2e}"


def check_j_function(quick: bool = False):
    worst = max(abs(j_value(j_inverse(I)) - I) for I in (0.2, 0.4, 0.6, 0.8, 0.9999))
    return "J-function round trip", worst < 1e-3, f"max error {worst:.2e}"


SUITES = (check_gradients, check_residual_isi_bound, check_bcjr, check_j_function)


def run_all(quick: bool = False):
    return [suite(quick) for suite in SUITES]
