"""Regenerate src/hmtart/data/filters.json from PyWavelets.

Orthogonal lowpass filters are projected onto the nearest orthonormal filter
(SLSQP least-squares projection onto the double-shift orthogonality
equations plus zero-DC highpass, polished by Gauss-Newton). For the
short Daubechies-type families this only restores full double precision
(PyWavelets publishes sym3 to ~11 digits); for dmey it is a real correction,
since the published 62-tap FIR table is not orthonormal and does not
reconstruct exactly.
"""
import json
import pathlib

import numpy as np
import pywt
from scipy.optimize import minimize

MENU = {"haar": "haar", "db2": "db2", "sym3": "sym3", "coif1": "coif1",
        "bior1.3": "bior1.3", "rbior1.3": "rbio1.3", "dmey": "dmey"}
OUT = pathlib.Path(__file__).resolve().parents[1] / "src/hmtart/data/filters.json"


def _constraints(h):
    L = len(h)
    res, rows = [], []
    for m in range(L // 2):
        res.append(h[: L - 2 * m] @ h[2 * m:] - (1.0 if m == 0 else 0.0))
        g = np.zeros(L)
        g[2 * m:] += h[: L - 2 * m]
        g[: L - 2 * m] += h[2 * m:]
        rows.append(g)
    alt = (-1.0) ** np.arange(L)
    res.append(alt @ h)  # highpass must annihilate constants exactly
    rows.append(alt)
    return np.array(res), np.array(rows)


def orthonormalize(h0, iters=50):
    """Nearest filter to ``h0`` (least squares) that is exactly orthonormal."""
    h0 = np.asarray(h0, dtype=float)
    if np.abs(_constraints(h0)[0]).max() > 1e-9:
        h0 = _project(h0)
    h = h0
    for _ in range(iters):
        res, rows = _constraints(h)
        if np.abs(res).max() < 1e-15:
            break
        h = h + np.linalg.lstsq(rows, -res, rcond=None)[0]
    return h


def _project(h0):
    sol = minimize(lambda h: np.sum((h - h0) ** 2), h0, jac=lambda h: 2 * (h - h0), method="SLSQP",
                   constraints=[{"type": "eq", "fun": lambda h: _constraints(h)[0],
                                 "jac": lambda h: _constraints(h)[1]}],
                   options={"ftol": 1e-16, "maxiter": 1000})
    return sol.x


def main():
    table = {}
    for name, pyname in MENU.items():
        w = pywt.Wavelet(pyname)
        dec_lo, dec_hi = np.array(w.dec_lo), np.array(w.dec_hi)
        rec_lo, rec_hi = np.array(w.rec_lo), np.array(w.rec_hi)
        if w.orthogonal:
            dec_lo = orthonormalize(dec_lo)
            L = len(dec_lo)
            dec_hi = np.array([(-1) ** (k + 1) * dec_lo[L - 1 - k] for k in range(L)])
            rec_lo, rec_hi = dec_lo[::-1].copy(), dec_hi[::-1].copy()
        table[name] = {
            "orthogonal": bool(w.orthogonal),
            "dec_lo": dec_lo.tolist(), "dec_hi": dec_hi.tolist(),
            "rec_lo": rec_lo.tolist(), "rec_hi": rec_hi.tolist(),
        }
    OUT.write_text(json.dumps(table, indent=1) + "\n")


if __name__ == "__main__":
    main()
