"""Human-readable summary and a standalone plotting script for a results directory."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .checks import evaluate_checks, fit_slope
from .csvio import read_rows

PLOT_SCRIPT = '''\
"""Log-log convergence plots for this results directory (needs matplotlib)."""

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
COLUMNS = ("coupling_mean", "dinf_drift", "dinf_noise", "w2_pooled_T", "w2_wninf_T")


def load():
    with open(HERE / "convergence.csv", newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["N"].isdigit()]
    series = defaultdict(lambda: defaultdict(list))
    for r in rows:
        for c in COLUMNS:
            v = float(r[c])
            if v == v and v > 0:
                series[c][int(r["N"])].append(v)
    return series


def main():
    series = load()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for c in COLUMNS:
        if not series[c]:
            continue
        ns = sorted(series[c])
        ax.loglog(ns, [sum(series[c][n]) / len(series[c][n]) for n in ns], "o-", label=c)
    ax.set_xlabel("N")
    ax.set_ylabel("seed average")
    ax.legend()
    fig.tight_layout()
    fig.savefig(HERE / "convergence.png", dpi=150)


if __name__ == "__main__":
    main()
'''


def _load_convergence(path: Path):
    header, raw = read_rows(path)
    rows = [[float(v) for v in r] for r in raw if r and r[0].isdigit()]
    return header, rows


def emit_report(results_dir) -> tuple[str, Path]:
    """Write ``summary.txt`` and ``plot_convergence.py``; returns (summary text, script path)."""
    from .runner import RunManifest

    results_dir = Path(results_dir)
    manifest = RunManifest.read(results_dir)
    conv = results_dir / "convergence.csv"
    if not conv.is_file():
        raise FileNotFoundError(f"no convergence.csv in {results_dir}")
    header, rows = _load_convergence(conv)
    refit = fit_slope([r[0] for r in rows], [r[header.index("coupling_mean")] for r in rows])

    pde_drift = None
    pde_path = results_dir / "pde_compare.csv"
    if pde_path.is_file():
        ph, prow = read_rows(pde_path)
        k = ph.index("mass_drift")
        pde_drift = max((float(r[k]) for r in prow), default=0.0)
    checks = evaluate_checks(rows, header, refit, manifest.check_settings,
                             picard_converged=manifest.checks.get("picard_converged"),
                             pde_mass_drift=pde_drift)

    lines = [
        f"scenario: {manifest.name}",
        f"config hash: {manifest.config_hash}",
        f"status: {manifest.status}" + (f" (stage {manifest.failed_stage})" if manifest.failed_stage else ""),
        "",
        "per-N seed averages",
    ]
    cols = ["coupling_mean", "coupling_bound", "dinf_drift", "dinf_noise", "growth_stat_drift", "w2_pooled_T"]
    lines.append("  " + "N".rjust(6) + "".join(c.rjust(20) for c in cols))
    groups = defaultdict(list)
    for r in rows:
        groups[int(r[0])].append(r)
    for n in sorted(groups):
        vals = [np.mean([g[header.index(c)] for g in groups[n]]) for c in cols]
        lines.append("  " + str(n).rjust(6) + "".join(f"{v:20.6g}" for v in vals))
    lines += ["", f"log-log slope of coupling_mean vs N: {refit:.6g}", "", "checks"]
    for name, passed in sorted(checks.items()):
        lines.append(f"  {'PASS' if passed else 'FAIL'}  {name}")
    if not checks:
        lines.append("  (none applicable)")
    text = "\n".join(lines) + "\n"

    (results_dir / "summary.txt").write_text(text)
    script = results_dir / "plot_convergence.py"
    script.write_text(PLOT_SCRIPT)
    return text, script
