"""Monte-Carlo harness: iterate ensembles, confidence bands, coverage and support metrics.

Random streams (``base = RngStream(seed, 0)``):

* repetition ``r`` draws its data from ``rng_split(rng_split(base, 0), r)``
* band path ``p`` uses ``rng_split(rng_split(base, 1), p)``
* the kernel design sample uses ``rng_split(base, 2)``
* the shared PCA initial point uses ``rng_split(base, 3)``
* the regression coefficients use ``RngStream(coef_seed, 0)``

Repetitions are processed in fixed-size chunks, so the results do not depend
on the number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .dynamics import (MeanTrajectory, lr_mean_trajectory, ospca_mean_ode, rda_limit_bias,
                       sign_stable_intervals, uniform_grid)
from .errors import ConfigError, DivergenceError, GrdaError
from .models import (LinearModel, SpcaModel, block_components, build_ar_covariance, deflated_products,
                     draw_sparse_coefficients, lr_from_normals, rowwise_matvec, spiked_covariance)
from .numerics import RngStream, rng_split
from .optimizer import (DIVERGENCE_LIMIT, L1, NoPenalty, PowerLaw, Rda, SimPowerLaw, Zero, prox,
                        tuning_value)
from .sde import Band, GaussianExact, band_from_quantiles, monte_carlo_kernel, simulate_V

REP_CHUNK = 25
STEP_CHUNK = 1000
MAX_DIVERGED_FRACTION = 0.05


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    problem: str = "lr"
    d: int = 20
    k: int = 1
    # regression model
    rho: float = -0.5
    h_diag: Optional[list] = None
    sigma_eps: float = 1.0
    support: int = 6
    coef_seed: int = 1
    min_active_magnitude: Optional[float] = None
    # pca model
    pca_active: int = 10
    pca_eigvals: list = field(default_factory=lambda: [2.0, 1.0])
    # algorithm
    algorithm: str = "grda"
    schedule: str = "sim"  # "sim": gamma^(1/2+mu) n^mu, "power": c sqrt(gamma) (n gamma - t0)_+^mu
    c0: float = 0.1
    c: float = 1.0
    mu: float = 0.7
    t0: float = 0.0
    gamma: float = 1e-3
    horizon: float = 20.0
    reps: int = 300
    # bands
    band_paths: int = 500
    dt: float = 0.1
    alpha: float = 0.05
    kernel: str = "monte_carlo"
    kernel_samples: int = 5000
    # run control
    seed: int = 0
    out: str = "out"
    workers: int = 1
    trajectory_reps: int = 10

    def validate(self) -> "ExperimentConfig":
        if self.problem not in ("lr", "pca"):
            raise ConfigError(f"problem must be 'lr' or 'pca', got {self.problem!r}")
        if self.algorithm not in ("sgd", "rda", "grda"):
            raise ConfigError(f"algorithm must be sgd, rda or grda, got {self.algorithm!r}")
        if self.schedule not in ("sim", "power"):
            raise ConfigError(f"schedule must be 'sim' or 'power', got {self.schedule!r}")
        if self.kernel not in ("monte_carlo", "exact", "empirical"):
            raise ConfigError(f"kernel must be monte_carlo, exact or empirical, got {self.kernel!r}")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.d < 1:
            raise ConfigError("d must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.band_paths < 1 or self.kernel_samples < 2:
            raise ConfigError("band_paths must be >= 1 and kernel_samples >= 2")
        if self.c0 < 0 or self.c < 0 or self.mu < 0 or self.t0 < 0:
            raise ConfigError("schedule parameters must be non-negative")
        if self.problem == "lr" and not 0 <= self.support <= self.d:
            raise ConfigError("support must lie in [0, d]")
        if self.problem == "pca" and not 1 <= self.k <= 2:
            raise ConfigError("pca experiments support k in {1, 2}")
        if self.h_diag is not None and len(self.h_diag) != self.d:
            raise ConfigError("h_diag must have d entries")
        if self.gamma * 1e-9 > self.dt:
            raise ConfigError("dt must not be smaller than gamma")
        uniform_grid(self.horizon, self.dt)
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def make_schedule(cfg: ExperimentConfig):
    if cfg.algorithm == "sgd":
        return Zero()
    if cfg.algorithm == "rda":
        return Rda(cfg.c0)
    if cfg.schedule == "sim":
        return SimPowerLaw(cfg.mu)
    return PowerLaw(cfg.c, cfg.mu, cfg.t0)


def make_penalty(cfg: ExperimentConfig):
    return NoPenalty() if cfg.algorithm == "sgd" else L1()


def build_lr_model(cfg: ExperimentConfig) -> LinearModel:
    if cfg.h_diag is not None:
        H = np.diag(np.asarray(cfg.h_diag, dtype=float))
    else:
        H = build_ar_covariance(cfg.d, cfg.rho)
    w_star = draw_sparse_coefficients(cfg.d, cfg.support, RngStream(cfg.coef_seed, 0), cfg.min_active_magnitude)
    return LinearModel.build(H, w_star, cfg.sigma_eps)


def build_pca_model(cfg: ExperimentConfig) -> SpcaModel:
    spikes = np.asarray(cfg.pca_eigvals, dtype=float)
    if spikes.size < cfg.k or np.any(spikes <= 0):
        raise ConfigError("pca_eigvals needs at least k positive spikes")
    U_all = block_components(cfg.d, spikes.size, cfg.pca_active)
    C = spiked_covariance(U_all, spikes)
    return SpcaModel.build(C, U_all[:, : cfg.k])


def random_sphere_init(d: int, k: int, rng: RngStream) -> np.ndarray:
    """Columns drawn independently and uniformly from the unit sphere."""
    Z = rng.normal((k, d)).T
    return Z / np.linalg.norm(Z, axis=0)


# ---------------------------------------------------------------------------
# Iterate ensembles
# ---------------------------------------------------------------------------


@dataclass
class _ChunkTask:
    kind: str
    model: object
    schedule: object
    penalty: object
    gamma: float
    record_steps: np.ndarray
    reps: list
    seed: int
    init: np.ndarray


def _rep_stream(seed: int, r: int) -> RngStream:
    return rng_split(rng_split(RngStream(seed, 0), 0), r)


def _run_chunk(task: _ChunkTask):
    """Run the repetitions in ``task.reps`` side by side; returns recorded iterates."""
    nr = len(task.reps)
    steps = task.record_steps
    N = int(steps[-1])
    streams = [_rep_stream(task.seed, r) for r in task.reps]
    gamma = task.gamma
    if task.kind == "lr":
        model = task.model
        d = model.d
        v = np.tile(task.init, (nr, 1))
        dim = d
        draw = d + 1
    else:
        model = task.model
        d, k = model.U_star.shape
        v = np.tile(task.init.T[None], (nr, 1, 1))  # (nr, k, d)
        dim = d * k
        draw = d
    w = v.copy()
    wsum = np.zeros_like(w)
    rec = np.empty((nr, steps.size, dim))
    risk = np.full((nr, steps.size), np.nan)
    diverged = np.zeros(nr, dtype=bool)
    H = model.H if task.kind == "lr" else None

    def record(idx, n):
        rec[:, idx] = w.reshape(nr, dim)
        if task.kind == "lr":
            avg = wsum / n if n > 0 else w
            delta = avg - model.w_star
            risk[:, idx] = 0.5 * np.sum(delta * rowwise_matvec(delta, H), axis=1)

    ri = 0
    while ri < steps.size and steps[ri] == 0:
        record(ri, 0)
        ri += 1
    n = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while n < N:
            length = min(STEP_CHUNK, N - n)
            z = np.stack([s.normal((length, draw)) for s in streams])
            if task.kind == "lr":
                X, Y = lr_from_normals(model, z)
            else:
                X = rowwise_matvec(z, model.factor)
            for i in range(length):
                n += 1
                x = X[:, i]
                lam = tuning_value(task.schedule, n, gamma)
                if task.kind == "lr":
                    resid = Y[:, i] - np.sum(x * w, axis=1)
                    v = v + gamma * x * resid[:, None]
                    w = prox(v, lam, task.penalty)
                else:
                    v = v + gamma * deflated_products(w, x)
                    w = prox(v, lam, task.penalty)
                wsum = wsum + w
                while ri < steps.size and steps[ri] == n:
                    record(ri, n)
                    ri += 1
            bad = ~np.all(np.isfinite(w.reshape(nr, -1)), axis=1) | (
                np.max(np.abs(w.reshape(nr, -1)), axis=1) > DIVERGENCE_LIMIT
            )
            if np.any(bad):
                diverged |= bad
                # keep diverged reps numerically inert; they are discarded later
                v[bad] = 0.0
                w[bad] = 0.0
                wsum[bad] = 0.0
    return rec, risk, diverged


@dataclass
class Ensemble:
    grid: np.ndarray
    values: np.ndarray  # (reps_kept, grid, dim)
    risk: np.ndarray  # (reps_kept, grid)
    kept: np.ndarray  # original repetition indices
    n_diverged: int


def record_steps(grid: np.ndarray, gamma: float) -> np.ndarray:
    return np.floor(grid / gamma + 1e-9).astype(np.int64)


def run_ensemble(kind, model, schedule, penalty, gamma, grid, reps, seed, init, workers=1) -> Ensemble:
    steps = record_steps(grid, gamma)
    tasks = [
        _ChunkTask(kind, model, schedule, penalty, gamma, steps, list(range(lo, min(lo + REP_CHUNK, reps))), seed, init)
        for lo in range(0, reps, REP_CHUNK)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    rec = np.concatenate([r[0] for r in results])
    risk = np.concatenate([r[1] for r in results])
    diverged = np.concatenate([r[2] for r in results])
    n_div = int(diverged.sum())
    if n_div > MAX_DIVERGED_FRACTION * reps:
        raise DivergenceError(f"{n_div} of {reps} repetitions diverged")
    kept = np.flatnonzero(~diverged)
    return Ensemble(grid, rec[kept], risk[kept], kept, n_div)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def coverage_metric(values, lower, upper, mask):
    """Joint (rep, coordinate) coverage per grid time over coordinates in ``mask``."""
    if not np.any(mask) or values.shape[0] == 0:
        return np.full(values.shape[1], np.nan)
    inside = (values[..., mask] >= lower[None][..., mask]) & (values[..., mask] <= upper[None][..., mask])
    return inside.mean(axis=(0, 2))


def coverage_excluding_changes(values, lower, upper, mask, signs, grid, dt):
    """Coverage over (rep, coordinate) pairs away from sign changes of that coordinate.

    A coordinate is excluded at time t if its mean-path sign changes within
    two grid steps of t.
    """
    G = grid.size
    flips = signs[1:] != signs[:-1]  # change between m and m+1
    near = np.zeros_like(signs, dtype=bool)
    for m in np.argwhere(flips):
        t_change = grid[m[0] + 1]
        near[np.abs(grid - t_change) <= 2 * dt + 1e-12, m[1]] = True
    inside = (values >= lower[None]) & (values <= upper[None])
    out = np.full(G, np.nan)
    for i in range(G):
        cols = mask & ~near[i]
        if np.any(cols) and values.shape[0]:
            out[i] = inside[:, i][:, cols].mean()
    return out


def support_metrics(values, truth):
    """Per-time (true_zero_prop, false_zero_prop) averaged over repetitions."""
    zero = values == 0.0
    inactive = truth == 0.0
    active = ~inactive
    tz = zero[..., inactive].mean(axis=(0, 2)) if np.any(inactive) else np.full(values.shape[1], np.nan)
    fz = zero[..., active].mean(axis=(0, 2)) if np.any(active) else np.full(values.shape[1], np.nan)
    return tz, fz


def average_bias(values, reference, mask):
    """Mean over masked coordinates of |E_hat[w_j] - reference_j| per grid time."""
    if not np.any(mask) or values.shape[0] == 0:
        return np.full(values.shape[1], np.nan)
    return np.abs(values.mean(axis=0)[:, mask] - reference[:, mask]).mean(axis=1)


def excess_risk_of_average(model: LinearModel, avg) -> float:
    """0.5 (avg - w*)^T H (avg - w*) for the least-squares loss."""
    delta = np.asarray(avg, dtype=float) - model.w_star
    return float(0.5 * delta @ model.H @ delta)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("coverage", "coverage_se", "avg_bias", "true_zero_prop", "false_zero_prop")


@dataclass
class Report:
    config: dict
    grid: np.ndarray
    metrics: dict  # name -> array aligned with grid
    band: Optional[Band] = None
    trajectories: Optional[np.ndarray] = None  # (reps_out, grid, dim)
    trajectory_ids: Optional[np.ndarray] = None
    divergence: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    version: str = __version__


def _window_mean(grid, series, lo, hi):
    sel = (grid >= lo - 1e-9) & (grid <= hi + 1e-9) & np.isfinite(series)
    return float(np.mean(series[sel])) if np.any(sel) else float("nan")


def _build_band(cfg, model, traj, schedule, base):
    kernel = (
        GaussianExact(model)
        if cfg.kernel == "exact"
        else monte_carlo_kernel(model, cfg.kernel_samples, rng_split(base, 2), cfg.kernel)
    )
    ens = simulate_V(model, traj, schedule, cfg.band_paths, cfg.dt, rng_split(base, 1), kernel=kernel)
    band = band_from_quantiles(ens, cfg.alpha, traj, cfg.gamma, min_paths=min(100, cfg.band_paths))
    return band, ens.n_excluded


def _assemble(cfg, grid, ens, traj, truth, band, n_band_excluded, extra_summary=None, series=None):
    values = ens.values
    active = truth != 0.0
    R = values.shape[0]
    metrics = {}
    if band is not None:
        cov = coverage_metric(values, band.lower, band.upper, active)
        metrics["coverage"] = cov
        metrics["coverage_se"] = np.sqrt(cov * (1 - cov) / max(R, 1))
    else:
        metrics["coverage"] = np.full(grid.size, np.nan)
        metrics["coverage_se"] = np.full(grid.size, np.nan)
    metrics["avg_bias"] = average_bias(values, traj.values, active)
    tz, fz = support_metrics(values, truth)
    metrics["true_zero_prop"] = tz
    metrics["false_zero_prop"] = fz

    series = dict(series or {})
    summary = {
        "reps_used": int(R),
        "terminal_coverage": float(metrics["coverage"][-1]),
        "terminal_avg_bias": float(metrics["avg_bias"][-1]),
        "terminal_true_zero_prop": float(tz[-1]),
        "terminal_false_zero_prop": float(fz[-1]),
        "coverage_second_half": _window_mean(grid, metrics["coverage"], cfg.horizon / 2, cfg.horizon),
    }
    if band is not None:
        signs = sign_stable_intervals(traj).signs
        excl = coverage_excluding_changes(values, band.lower, band.upper, active, signs, grid, cfg.dt)
        series["coverage_excluding_sign_changes"] = excl
        summary["coverage_second_half_excluding_sign_changes"] = _window_mean(grid, excl, cfg.horizon / 2, cfg.horizon)
    summary.update(extra_summary or {})
    n_out = min(cfg.trajectory_reps, R)
    return Report(
        config=cfg.to_dict(),
        grid=grid,
        metrics=metrics,
        band=band,
        trajectories=values[:n_out],
        trajectory_ids=ens.kept[:n_out],
        divergence={"reps_diverged": ens.n_diverged, "band_paths_excluded": n_band_excluded},
        summary=summary,
        series=series,
    )


def run_lr_experiment(cfg: ExperimentConfig) -> Report:
    """Iterate ensemble, mean path, band and metrics for sparse linear regression."""
    cfg.validate()
    if cfg.problem != "lr":
        raise ConfigError("run_lr_experiment needs problem = 'lr'")
    model = build_lr_model(cfg)
    schedule = make_schedule(cfg)
    base = RngStream(cfg.seed, 0)
    grid = uniform_grid(cfg.horizon, cfg.dt)
    w0 = np.zeros(model.d)
    traj = lr_mean_trajectory(model.H, w0, model.w_star, grid)
    ens = run_ensemble("lr", model, schedule, make_penalty(cfg), cfg.gamma, grid, cfg.reps, cfg.seed, w0, cfg.workers)
    band, n_ex = (None, 0) if isinstance(schedule, Rda) else _build_band(cfg, model, traj, schedule, base)
    series = {"excess_risk_of_average": ens.risk.mean(axis=0) if ens.risk.size else np.full(grid.size, np.nan)}
    return _assemble(cfg, grid, ens, traj, model.w_star, band, n_ex,
                     {"w_star": model.w_star.tolist()}, series)


def run_pca_experiment(cfg: ExperimentConfig) -> Report:
    """OPCA/OSPCA ensemble against the numerically solved mean ODE."""
    cfg.validate()
    if cfg.problem != "pca":
        raise ConfigError("run_pca_experiment needs problem = 'pca'")
    if cfg.algorithm == "rda":
        raise ConfigError("pca experiments support sgd and grda only")
    model = build_pca_model(cfg)
    schedule = make_schedule(cfg)
    base = RngStream(cfg.seed, 0)
    grid = uniform_grid(cfg.horizon, cfg.dt)
    d, k = model.U_star.shape
    U0 = random_sphere_init(d, k, rng_split(base, 3))
    traj = ospca_mean_ode(model, U0, grid)
    ens = run_ensemble("pca", model, schedule, make_penalty(cfg), cfg.gamma, grid, cfg.reps, cfg.seed, U0, cfg.workers)

    # align each repetition's columns with the branch followed by the mean path
    final = traj.values[-1].reshape(k, d)
    flips = 0
    vals = ens.values.reshape(ens.values.shape[0], grid.size, k, d)
    for j in range(k):
        s = np.where(np.sum(vals[:, -1, j, :] * final[j], axis=1) < 0, -1.0, 1.0)
        flips += int(np.sum(s < 0))
        vals[:, :, j, :] *= s[:, None, None]
    ens.values = vals.reshape(ens.values.shape)

    band, n_ex = _build_band(cfg, model, traj, schedule, base)
    truth = model.U_star.T.ravel()
    extra = {"sign_flipped_columns": flips, "ode_snapped_at": traj.meta.get("snapped_at"),
             "terminal_alignment": [float(abs(final[j] @ model.U_star[:, j])) for j in range(k)]}
    return _assemble(cfg, grid, ens, traj, truth, band, n_ex, extra)


def run_rda_bias_check(cfg: ExperimentConfig) -> Report:
    """Long-run bias of RDA on active coordinates under a diagonal design.

    The long-run mean is the average over repetitions and over the last
    quarter of the horizon.  Here ``avg_bias`` is measured against w*.
    """
    cfg = dataclasses.replace(cfg, problem="lr", algorithm="rda")
    cfg.validate()
    h = np.ones(cfg.d) if cfg.h_diag is None else np.asarray(cfg.h_diag, dtype=float)
    cfg = dataclasses.replace(cfg, h_diag=h.tolist())
    model = build_lr_model(cfg)
    schedule = Rda(cfg.c0)
    grid = uniform_grid(cfg.horizon, cfg.dt)
    w0 = np.zeros(model.d)
    ens = run_ensemble("lr", model, schedule, L1(), cfg.gamma, grid, cfg.reps, cfg.seed, w0, cfg.workers)
    truth = model.w_star
    active = np.flatnonzero(truth != 0)
    late = grid >= 0.75 * cfg.horizon - 1e-9
    long_run = ens.values[:, late].mean(axis=(0, 1))
    measured = np.abs(long_run[active] - truth[active])
    predicted = np.array([rda_limit_bias(cfg.c0, h[j]) for j in active])
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(predicted > 0, np.abs(measured - predicted) / predicted, np.abs(measured))
    direction = np.sign(long_run[active] - truth[active]) == -np.sign(truth[active])
    ref = np.tile(truth, (grid.size, 1))
    flat = MeanTrajectory(grid, ref, {"model": "lr-truth"})
    extra = {
        "rda_active_coords": active.tolist(),
        "rda_measured_bias": measured.tolist(),
        "rda_predicted_bias": predicted.tolist(),
        "rda_rel_error": rel.tolist(),
        "rda_max_rel_error": float(np.max(rel)) if rel.size else float("nan"),
        "rda_direction_ok": bool(np.all(direction)) if cfg.c0 > 0 else True,
        "w_star": truth.tolist(),
    }
    return _assemble(cfg, grid, ens, flat, truth, None, 0, extra)


def run_band_only(cfg: ExperimentConfig) -> Report:
    """Mean path and band without empirical repetitions."""
    cfg.validate()
    base = RngStream(cfg.seed, 0)
    grid = uniform_grid(cfg.horizon, cfg.dt)
    schedule = make_schedule(cfg)
    if cfg.problem == "lr":
        model = build_lr_model(cfg)
        traj = lr_mean_trajectory(model.H, np.zeros(model.d), model.w_star, grid)
    else:
        model = build_pca_model(cfg)
        d, k = model.U_star.shape
        traj = ospca_mean_ode(model, random_sphere_init(d, k, rng_split(base, 3)), grid)
    band, n_ex = _build_band(cfg, model, traj, schedule, base)
    empty = {name: np.full(grid.size, np.nan) for name in METRIC_COLUMNS}
    return Report(config=cfg.to_dict(), grid=grid, metrics=empty, band=band,
                  divergence={"reps_diverged": 0, "band_paths_excluded": n_ex},
                  summary={"band_paths_used": cfg.band_paths - n_ex})


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return "%.9g" % x


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in (obj.tolist() if isinstance(obj, np.ndarray) else obj)]
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) or math.isinf(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_tables(report: Report) -> dict:
    """CSV file contents keyed by file name."""
    grid = report.grid
    traj_rows = []
    if report.trajectories is not None:
        for i, rep in enumerate(report.trajectory_ids):
            for m, t in enumerate(grid):
                for j, w in enumerate(report.trajectories[i, m]):
                    traj_rows.append((int(rep), _fmt(t), j, _fmt(w)))
    band_rows = []
    if report.band is not None:
        b = report.band
        for m, t in enumerate(b.grid):
            for j in range(b.mean.shape[1]):
                band_rows.append((_fmt(t), j, _fmt(b.mean[m, j]), _fmt(b.lower[m, j]), _fmt(b.upper[m, j])))
    metric_rows = []
    if report.metrics:
        for m, t in enumerate(grid):
            metric_rows.append((_fmt(t),) + tuple(_fmt(report.metrics[c][m]) for c in METRIC_COLUMNS))
    return {
        "trajectories.csv": _csv_text(("rep", "t", "coord", "w"), traj_rows),
        "band.csv": _csv_text(("t", "coord", "mean", "lower", "upper"), band_rows),
        "metrics.csv": _csv_text(("t",) + METRIC_COLUMNS, metric_rows),
    }


def emit_report(report: Report, out_dir: str) -> dict:
    """Write the CSV tables and report.json; returns the written paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise GrdaError(f"cannot create output directory {out_dir}: {exc}") from exc
    files = report_tables(report)
    payload = {
        "config": report.config,
        "divergence": report.divergence,
        "summary": report.summary,
        "series": {"t": report.grid, **report.series},
        "version": report.version,
    }
    files["report.json"] = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    paths = {}
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise GrdaError(f"cannot write {path}: {exc}") from exc
        paths[name] = path
    return paths
