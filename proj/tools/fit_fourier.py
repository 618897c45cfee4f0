#!/usr/bin/env python3
"""Least-squares fit of a rank-N Fourier activation to sigmoid and tanh.

For a fixed frequency w the model A + sum a_n cos(n w x) + b_n sin(n w x) is
linear in its coefficients, so each candidate w is solved with lstsq and the
w with the smallest max-abs error on the check grid is kept.

    python3 tools/fit_fourier.py > data/fixtures/fourier_fit.json
"""
import json

import numpy as np

RANK = 5
LO, HI = -4.0, 4.0
FIT_POINTS = 4001
CHECK_POINTS = 401

TARGETS = {
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "tanh": np.tanh,
}


def design(x, w):
    cols = [np.ones_like(x)]
    cols += [np.cos(n * w * x) for n in range(1, RANK + 1)]
    cols += [np.sin(n * w * x) for n in range(1, RANK + 1)]
    return np.stack(cols, axis=1)


def fit(f):
    x_fit = np.linspace(LO, HI, FIT_POINTS)
    x_chk = np.linspace(LO, HI, CHECK_POINTS)
    best = None
    for w in np.linspace(0.05, 1.0, 951):
        coef, *_ = np.linalg.lstsq(design(x_fit, w), f(x_fit), rcond=None)
        err = np.max(np.abs(design(x_chk, w) @ coef - f(x_chk)))
        if best is None or err < best[0]:
            best = (err, w, coef)
    err, w, coef = best
    return {
        "A": coef[0],
        "omega": w,
        "a": list(coef[1 : RANK + 1]),
        "b": list(coef[RANK + 1 :]),
        "max_abs_error": err,
    }


def main():
    out = {
        "rank": RANK,
        "interval": [LO, HI],
        "grid_points": CHECK_POINTS,
        "fits": {name: {k: (float(v) if np.isscalar(v) else [float(t) for t in v]) for k, v in fit(f).items()}
                 for name, f in TARGETS.items()},
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
