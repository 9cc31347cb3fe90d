"""Regenerate ``frozen.json``: reference values computed with mpmath at 50 digits.

Every value here is obtained without touching the package: closed forms are
evaluated in arbitrary precision and tail probabilities come from direct
quadrature of the chi-square density.  Run from the repository root::

    python tests/oracles/compute_oracles.py
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50


def logistic(x):
    return 1 / (1 + mp.exp(-x))


def chi2_upper_tail(x, df):
    k = mp.mpf(df) / 2
    density = lambda t: t ** (k - 1) * mp.exp(-t / 2) / (2 ** k * mp.gamma(k))  # noqa: E731
    return 1 - mp.quad(density, [0, 1, x])


def nesterov(steps, g, lr, m):
    w = v = mp.mpf(0)
    out = []
    for _ in range(steps):
        v = m * v - lr * g
        w = w + m * v - lr * g
        out.append((float(v), float(w)))
    return out


values = {
    "intercept_three_of_four": float(mp.log(3)),
    "irf_theta1_tau1_lambda2": float(logistic(2 * 1 - 1)),
    "irf_theta0_tau3_lambda1e-4": float(logistic(mp.mpf("1e-4") * 0 - 3)),
    "irf_at_threshold": 0.5,
    "chi2_tail_3.841459": float(chi2_upper_tail(mp.mpf("3.841459"), 1)),
    "chi2_tail_6.634897": float(chi2_upper_tail(mp.mpf("6.634897"), 1)),
    "chi2_tail_5_df2": float(chi2_upper_tail(mp.mpf(5), 2)),
    "glorot_100_200": float(mp.sqrt(mp.mpf(6) / 300)),
    "bce_half_half": float(mp.log(2)),
    "bce_zero_vs_0.9": float(-mp.log(mp.mpf("0.1"))),
    "nesterov_two_steps": nesterov(2, 1, mp.mpf("0.1"), mp.mpf("0.8")),
    "bh_three": [0.03, 0.03, 0.03],
    "bh_two": [0.01, 0.5],
    "label_lines_4x5": 2 * 4 * 5 + 1,
    # trapezoid area for scores [.9,.8,.7,.6], labels [1,0,1,0] by pair counting
    "auroc_four_points": 3 / 4,
}

Path(__file__).with_name("frozen.json").write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
print(json.dumps(values, indent=2, sort_keys=True))
