"""Pass/fail checks evaluated on sweep output (shared by the runner and the report)."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def fit_slope(ns, values) -> float:
    """Least-squares slope of log(value) against log(N); nan if undetermined."""
    pts = [(float(n), float(v)) for n, v in zip(ns, values) if np.isfinite(v) and v > 0]
    if len({n for n, _ in pts}) < 2:
        return math.nan
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    return float(np.polyfit(x, y, 1)[0])


def evaluate_checks(rows, columns, slope, settings, picard_converged=None, pde_mass_drift=None) -> dict:
    """Checks that apply to the data at hand, as ``{name: passed}``."""
    col = {name: i for i, name in enumerate(columns)}
    get = lambda r, name: float(r[col[name]])
    checks = {}
    if picard_converged is not None:
        checks["picard_converged"] = bool(picard_converged)

    coupled = [r for r in rows if np.isfinite(get(r, "coupling_mean"))]
    if coupled:
        checks["coupling_below_bound"] = all(get(r, "coupling_mean") < get(r, "coupling_bound") for r in coupled)
        checks["wn2_le_wninf"] = all(get(r, "w2_wn2_T") <= get(r, "w2_wninf_T") for r in coupled)

    if settings.get("slope_max") is not None:
        checks["slope_max"] = bool(np.isfinite(slope) and slope <= settings["slope_max"])
    if settings.get("slope_min") is not None:
        checks["slope_min"] = bool(np.isfinite(slope) and slope >= settings["slope_min"])

    if settings.get("dinf_nonincreasing"):
        by_seed = defaultdict(list)
        for r in rows:
            by_seed[get(r, "seed")].append((get(r, "N"), get(r, "dinf_drift")))
        ok = True
        for seq in by_seed.values():
            vals = [v for _, v in sorted(seq)]
            ok &= all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
        checks["dinf_nonincreasing"] = bool(ok)

    if pde_mass_drift is not None:
        checks["pde_mass_conserved"] = bool(pde_mass_drift <= 1e-10)
    return checks
