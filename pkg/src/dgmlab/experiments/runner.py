"""Scenario execution: graphs, particles, mean field, coupling, PDE, CSV output."""

from __future__ import annotations

import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..coefficients import coupling_bound, theoretical_constants
from ..graph_limits import (ValidationError, check_growth_assumption, dgm_distance_inf, dgm_from_matrix,
                            dgm_limit, generate_pair)
from ..meanfield import (barmu, coupling_error, monomial, picard_solve, representative_initial,
                         simulate_representatives, uniform_u_grid)
from ..metrics import wasserstein2_1d, wn_aggregate
from ..particle_sim import BrownianStore, TimeGrid, empirical_measure, simulate_particles
from ..vfp import SpatialGrid, compare_to_mc, density_from_law, mass, solve_vfp, write_density_csv
from .checks import evaluate_checks, fit_slope
from .config import ScenarioConfig, load_config
from .csvio import write_rows

MANIFEST = "manifest.json"

log = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = {
    "N": "particle count",
    "seed": "seed of the graph draw, initial states and Brownian increments",
    "dinf_drift": "uniform BL distance between the drift graph DGM and its limit",
    "dinf_noise": "uniform BL distance between the noise graph DGM and its limit",
    "growth_stat_drift": "(1/N) max_i sum_j A_ij^2 for the drift graph",
    "growth_stat_noise": "(1/N) max_i sum_j Ahat_ij^2 for the noise graph",
    "coupling_mean": "mean over particles of sup_t |X_i - X_{i/N}|^2 under synchronous coupling",
    "coupling_bound": "evaluated right-hand side of the coupling estimate",
    "w2_pooled_T": "W2 between the particle empirical law and the label-averaged mean-field law at T",
    "w2_wn2_T": "L2-over-labels aggregate of per-label coupled path distances",
    "w2_wninf_T": "sup-over-labels aggregate of per-label coupled path distances",
    "runtime_s": "wallclock seconds for this row (volatile)",
}
CHECKPOINT_COLUMNS = {
    "N": "particle count",
    "seed": "run seed",
    "t": "checkpoint time",
    "w2_pooled": "W2 between particle and label-averaged mean-field laws",
    "second_moment_particles": "mean |X_i|^2 over particles",
    "second_moment_meanfield": "mean |X|^2 over all mean-field samples",
}
PICARD_COLUMNS = {
    "iterate": "Picard iterate index",
    "distance": "max over labels of the RMS sup-in-time gap to the previous iterate",
    "wallclock_seconds": "elapsed seconds since the start of the iteration (volatile)",
}
PDE_COLUMNS = {
    "u": "label",
    "testfn": "test function",
    "t": "checkpoint time",
    "pde_value": "integral of the test function against the PDE density",
    "mc_value": "Monte Carlo mean over mean-field samples",
    "gap": "absolute difference",
    "stderr": "Monte Carlo standard error",
    "mass_drift": "|mass(t) - mass(0)| of the PDE density",
}
DENSITY_COLUMNS = {"u": "label", "t": "checkpoint time", "x": "cell centre", "rho": "density"}
VOLATILE = {"convergence.csv": ["runtime_s"], "picard_log.csv": ["wallclock_seconds"]}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunManifest:
    name: str
    config_hash: str
    versions: dict
    seeds: dict
    outputs: list = field(default_factory=list)
    schema: dict = field(default_factory=dict)
    volatile_columns: dict = field(default_factory=dict)
    check_settings: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    status: str = "RUNNING"
    failed_stage: str | None = None
    error: str | None = None
    wallclock_s: float = 0.0
    directory: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "OK" and all(self.checks.values())

    def write(self) -> Path:
        path = Path(self.directory) / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, directory) -> "RunManifest":
        path = Path(directory) / MANIFEST
        if not path.is_file():
            raise FileNotFoundError(f"no {MANIFEST} in {directory}")
        return cls(**json.loads(path.read_text()))


def _versions() -> dict:
    return {"dgmlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def checkpoint_steps(grid: TimeGrid) -> list[int]:
    """Grid nodes nearest to T/4, T/2, 3T/4 and T."""
    return sorted({int(round(q * grid.steps)) for q in (0.25, 0.5, 0.75, 1.0)})


def _resolve_outputs(cfg: ScenarioConfig, config_path: Path, outputs) -> Path:
    out = Path(outputs) if outputs is not None else Path(cfg.outputs)
    if not out.is_absolute() and outputs is None:
        out = config_path.parent / out
    return out


class _Stages:
    """Runs named stages, turning any exception into a StageError."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def __call__(self, name, fn, *args, **kwargs):
        log.debug("stage %s", name)
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
            raise StageError(name, exc) from exc


def _per_label_distances(sup_sq: np.ndarray, labels: np.ndarray, u_grid: np.ndarray) -> np.ndarray:
    """sqrt(mean sup-squared gap) over the particles whose label is nearest each grid point."""
    owner = np.argmin(np.abs(labels[:, None] - u_grid[None, :]), axis=1)
    out = []
    for i in range(u_grid.size):
        sel = sup_sq[owner == i]
        if sel.size:
            out.append(math.sqrt(float(np.mean(sel))))
    return np.array(out)


def run_scenario(config_path, outputs=None) -> RunManifest:
    """Execute every stage of a scenario and write CSVs plus ``manifest.json``."""
    config_path = Path(config_path)
    cfg = load_config(config_path)
    out = _resolve_outputs(cfg, config_path, outputs)
    out.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(
        name=cfg.name, config_hash=cfg.digest(), versions=_versions(),
        seeds={"meanfield": cfg.seeds[0], "runs": [[n, s] for n in cfg.sweep for s in cfg.seeds]},
        volatile_columns=VOLATILE, check_settings=cfg.checks.model_dump(), directory=str(out),
    )
    stage = _Stages(manifest)
    t_start = time.perf_counter()
    try:
        _execute(cfg, out, manifest, stage)
        manifest.status = "OK"
    except StageError as exc:
        manifest.status = "FAILED"
        manifest.failed_stage = exc.stage
        manifest.error = str(exc)
        raise
    finally:
        manifest.wallclock_s = time.perf_counter() - t_start
        manifest.outputs = sorted(p.name for p in out.iterdir() if p.name != MANIFEST)
        manifest.write()
    return manifest


def _execute(cfg: ScenarioConfig, out: Path, manifest: RunManifest, stage: _Stages) -> None:
    cs = stage("setup", cfg.coefficients)
    law = cfg.initial_law()
    grid = TimeGrid(cfg.time.T, cfg.time.steps)
    drift_spec, noise_spec = cfg.graph_specs()
    limits = cfg.limit_specs()
    cps = checkpoint_steps(grid)

    schema = {"convergence.csv": CONVERGENCE_COLUMNS, "checkpoints.csv": CHECKPOINT_COLUMNS}
    sol = eta = eta_hat = None
    if limits is not None:
        m = cfg.limit_dgm.reference_grid
        eta = stage("limit_dgm", dgm_limit, limits[0], m)
        eta_hat = eta if limits[1] == limits[0] else stage("limit_dgm", dgm_limit, limits[1], m)
        mf = cfg.meanfield
        sol = stage("picard_solve", picard_solve, eta, eta_hat, cs, law, uniform_u_grid(mf.u_points), mf.M,
                    grid, mf.tol, mf.max_iter, cfg.seeds[0])
        write_rows(out / "picard_log.csv", list(PICARD_COLUMNS), [list(r) for r in sol.iteration_log])
        schema["picard_log.csv"] = PICARD_COLUMNS
    manifest.schema = schema

    rows, cp_rows = [], []
    dinf_cache: dict = {}
    pooled = {k: barmu(sol, k) for k in cps} if sol is not None and cs.d == 1 else {}
    mf_moment = {k: float(np.mean(np.sum(sol.states[:, :, k] ** 2, axis=-1))) for k in cps} if sol else {}

    for n in cfg.sweep:
        for seed in cfg.seeds:
            t0 = time.perf_counter()
            log.info("N=%d seed=%d", n, seed)
            pair = stage("generate_graph", generate_pair, drift_spec, noise_spec, n, seed)
            growth = (check_growth_assumption(pair.a), check_growth_assumption(pair.a_hat))
            dinf = (math.nan, math.nan)
            if eta is not None:
                def distances():
                    vals = []
                    for mat, lim in ((pair.a, eta), (pair.a_hat, eta_hat)):
                        key = (mat.tobytes(), id(lim))
                        if key not in dinf_cache:
                            dinf_cache[key] = dgm_distance_inf(dgm_from_matrix(mat), lim)
                        vals.append(dinf_cache[key])
                    return tuple(vals)
                dinf = stage("dgm_distance", distances)

            store = BrownianStore.generate(seed, n, grid, cs.d)
            ens = stage("simulate_particles", simulate_particles, pair, cs, law, grid, seed, brownian=store)

            coupling = bound = w2T = wn2 = wninf = math.nan
            if sol is not None:
                share = cfg.meanfield.share_initial
                x0 = representative_initial(law, n, seed, shared=share)
                reps = stage("representatives", simulate_representatives, eta, eta_hat, cs, sol, store, n,
                             initial=x0)
                consts = theoretical_constants(cs, eta, eta_hat, grid.t_final, max(growth))
                gap0 = float(np.mean(np.sum((ens.states[:, 0] - x0) ** 2, axis=1)))
                bound = coupling_bound(consts, cs, n, gap0, *dinf)
                rep = coupling_error(ens, reps, bound)
                coupling = rep.mean
                per_u = _per_label_distances(rep.per_particle_sup_sq, ens.labels, sol.u_grid)
                wn2, wninf = wn_aggregate(per_u, "l2"), wn_aggregate(per_u, "inf")
                for k in cps:
                    w2 = wasserstein2_1d(empirical_measure(ens, k), pooled[k]) if pooled else math.nan
                    m2 = float(np.mean(np.sum(ens.states[:, k] ** 2, axis=1)))
                    cp_rows.append([n, seed, k * grid.dt, w2, m2, mf_moment[k]])
                w2T = cp_rows[-1][3]
            rows.append([n, seed, *dinf, *growth, coupling, bound, w2T, wn2, wninf, time.perf_counter() - t0])
            write_rows(out / "convergence.csv", list(CONVERGENCE_COLUMNS), rows, summary=_summary(rows))
    write_rows(out / "checkpoints.csv", list(CHECKPOINT_COLUMNS), cp_rows)

    pde_mass_drift = None
    if cfg.pde is not None:
        pde_mass_drift = stage("pde", _pde_stage, cfg, cs, law, grid, eta, eta_hat, sol, cps, out)
        schema["pde_compare.csv"] = PDE_COLUMNS
        schema["density.csv"] = DENSITY_COLUMNS

    slope = fit_slope([r[0] for r in rows], [r[6] for r in rows])
    manifest.checks = evaluate_checks(
        rows, list(CONVERGENCE_COLUMNS), slope, cfg.checks.model_dump(),
        picard_converged=None if sol is None else sol.converged, pde_mass_drift=pde_mass_drift,
    )


def _summary(rows):
    slope = fit_slope([r[0] for r in rows], [r[6] for r in rows])
    return ["slope_coupling_mean_vs_N"] + [""] * 5 + [slope] + [""] * 5


def _pde_stage(cfg, cs, law, grid, eta, eta_hat, sol, cps, out):
    p = cfg.pde
    xg = SpatialGrid(p.x_min, p.x_max, p.cells)
    rho0 = density_from_law(law, xg, sol.u_grid)
    fld = solve_vfp(eta, eta_hat, cs, rho0, xg, sol.u_grid, grid, max_substeps=p.max_substeps)
    tests = [monomial(k) for k in p.testfns]
    cmp = compare_to_mc(fld, sol, tests, checkpoints=cps)
    drift = 0.0
    rows = []
    for i, u in enumerate(sol.u_grid):
        m0 = mass(fld, i, 0)
        for c, k in enumerate(cps):
            md = abs(mass(fld, i, k) - m0)
            drift = max(drift, md)
            for j, t in enumerate(tests):
                pde_val = float(np.sum(t.phi(xg.centers) * fld.rho[i, k]) * xg.dx)
                mc_val = float(np.mean(t.phi(sol.states[i, :, k, 0])))
                rows.append([u, t.name, k * grid.dt, pde_val, mc_val, cmp.gaps[i, j, c], cmp.stderr[i, j, c], md])
    write_rows(out / "pde_compare.csv", list(PDE_COLUMNS), rows)
    write_density_csv(fld, out / "density.csv", steps=[0, *cps])
    return drift


def convergence_study(config_path, outputs=None) -> Path:
    """Run the N-sweep of a scenario and return the path of ``convergence.csv``."""
    cfg = load_config(config_path)
    if len(set(cfg.sweep)) < 3:
        raise ValidationError("a convergence study needs at least three distinct N")
    manifest = run_scenario(config_path, outputs)
    return Path(manifest.directory) / "convergence.csv"
