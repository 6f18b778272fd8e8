"""Fluctuation SDE: covariance kernels, drift Jacobians, Euler-Maruyama paths, bands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .dynamics import MeanTrajectory, SignPattern, sign_stable_intervals
from .errors import ConfigError, KernelError
from .models import LinearModel, SpcaModel, deflation_matrix, rowwise_matvec
from .numerics import RngStream, rng_split, sym_eig
from .optimizer import PowerLaw, Rda, SimPowerLaw, TuningSchedule, Zero

# ---------------------------------------------------------------------------
# Kernel choices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianExact:
    """Closed-form kernel using Gaussian fourth moments."""

    model: Union[LinearModel, SpcaModel]


@dataclass(frozen=True)
class MonteCarlo:
    """Fourth-moment term averaged over a fixed design sample ``X`` (m x d).

    The second moment (H or C) is taken from the model, so the kernel is
    E_m[(XX^T - H) delta delta^T (XX^T - H)] + sigma_eps^2 H for regression.
    """

    model: Union[LinearModel, SpcaModel]
    X: np.ndarray


@dataclass(frozen=True)
class EmpiricalGradient:
    """Sample covariance of stochastic gradients over a fixed data set."""

    model: Union[LinearModel, SpcaModel]
    X: np.ndarray
    y: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Constant:
    """A fixed kernel matrix, independent of the state."""

    S: np.ndarray


KernelSpec = Union[GaussianExact, MonteCarlo, EmpiricalGradient, Constant]


def monte_carlo_kernel(model, m: int, rng: RngStream, kind: str = "monte_carlo") -> KernelSpec:
    """Draw ``m`` design points from ``model`` and wrap them in a kernel spec."""
    if m < 2:
        raise ConfigError(f"kernel sample size must be at least 2, got {m}")
    if isinstance(model, LinearModel):
        z = rng.normal((m, model.d + 1))
        X = rowwise_matvec(z[:, :-1], model.factor)
        y = np.sum(X * model.w_star, axis=1) + model.sigma_eps * z[:, -1]
    else:
        X = rowwise_matvec(rng.normal((m, model.d)), model.factor)
        y = None
    if kind == "monte_carlo":
        return MonteCarlo(model, X)
    if kind == "empirical":
        return EmpiricalGradient(model, X, y)
    raise ConfigError(f"unknown kernel kind {kind!r}")


def _mean_outer(a: np.ndarray) -> np.ndarray:
    # a: (m, p); symmetric by construction
    S = a.T @ a / a.shape[0]
    return 0.5 * (S + S.T)


def _check_psd(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)):
        raise KernelError("covariance kernel has non-finite entries")
    return S


def sigma_lr(w, spec: KernelSpec) -> np.ndarray:
    """Covariance kernel of the least-squares gradient noise at ``w``."""
    if isinstance(spec, Constant):
        return np.array(spec.S, dtype=float)
    model = spec.model
    if not isinstance(model, LinearModel):
        raise ConfigError("sigma_lr needs a linear-regression kernel spec")
    w = np.asarray(w, dtype=float)
    if w.shape != model.w_star.shape:
        raise ConfigError(f"w of shape {w.shape} does not match d={model.d}")
    H = model.H
    delta = w - model.w_star
    noise = model.sigma_eps**2 * H
    if isinstance(spec, GaussianExact):
        Hd = H @ delta
        S = np.outer(Hd, Hd) + float(delta @ Hd) * H + noise
    elif isinstance(spec, MonteCarlo):
        if not np.any(delta):
            return noise.copy()
        a = spec.X * (spec.X @ delta)[:, None] - H @ delta
        S = _mean_outer(a) + noise
    elif isinstance(spec, EmpiricalGradient):
        if spec.y is None:
            raise ConfigError("empirical regression kernel needs responses y")
        g = -spec.X * (spec.y - spec.X @ w)[:, None]
        g = g - g.mean(axis=0)
        S = g.T @ g / (g.shape[0] - 1)
    else:
        raise ConfigError(f"unknown kernel spec {spec!r}")
    return _check_psd(S)


def sigma_pca(U, spec: KernelSpec) -> np.ndarray:
    """kd x kd kernel with blocks A_j E[(XX^T - C) u_j u_l^T (XX^T - C)] A_l."""
    if isinstance(spec, Constant):
        return np.array(spec.S, dtype=float)
    model = spec.model
    if not isinstance(model, SpcaModel):
        raise ConfigError("sigma_pca needs a PCA kernel spec")
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    d, k = U.shape
    if (d, k) != model.U_star.shape:
        raise ConfigError(f"U of shape {U.shape} does not match the model")
    C = model.C
    A = [deflation_matrix(U, j + 1) for j in range(k)]
    if isinstance(spec, GaussianExact):
        CU = C @ U
        S = np.zeros((k * d, k * d))
        for j in range(k):
            for l in range(j, k):
                inner = float(U[:, j] @ CU[:, l])
                blk = A[j] @ (inner * C + np.outer(CU[:, l], CU[:, j])) @ A[l].T
                S[j * d : (j + 1) * d, l * d : (l + 1) * d] = blk
                S[l * d : (l + 1) * d, j * d : (j + 1) * d] = blk.T
    elif isinstance(spec, (MonteCarlo, EmpiricalGradient)):
        X = spec.X
        proj = X @ U  # (m, k)
        parts = []
        for j in range(k):
            # (xx^T - C) u_j, then deflate
            r = X * proj[:, j : j + 1] - C @ U[:, j]
            parts.append(r @ A[j].T)
        a = np.concatenate(parts, axis=1)
        if isinstance(spec, EmpiricalGradient):
            a = a - a.mean(axis=0)
            S = a.T @ a / (a.shape[0] - 1)
            S = 0.5 * (S + S.T)
        else:
            S = _mean_outer(a)
    else:
        raise ConfigError(f"unknown kernel spec {spec!r}")
    return _check_psd(S)


def kernel_at(model, point, spec: KernelSpec) -> np.ndarray:
    if isinstance(model, SpcaModel):
        d, k = model.U_star.shape
        return sigma_pca(np.asarray(point).reshape(k, d).T, spec)
    return sigma_lr(point, spec)


# ---------------------------------------------------------------------------
# Drift Jacobian
# ---------------------------------------------------------------------------


def pca_G(C, U) -> np.ndarray:
    """G(U): column j is -A_j C u_j."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    return np.column_stack([-(deflation_matrix(U, j + 1) @ (C @ U[:, j])) for j in range(U.shape[1])])


def grad_G(model, point) -> np.ndarray:
    """Jacobian of the mean drift G at ``point`` (stacked columns for PCA)."""
    if isinstance(model, LinearModel):
        return model.H.copy()
    if not isinstance(model, SpcaModel):
        raise ConfigError(f"unsupported model {type(model).__name__}")
    d, k = model.U_star.shape
    U = np.asarray(point, dtype=float)
    if U.ndim == 1:
        U = U.reshape(k, d).T
    if U.shape != (d, k):
        raise ConfigError(f"point of shape {U.shape} does not match the model")
    C = model.C
    CU = C @ U
    eye = np.eye(d)
    J = np.zeros((k * d, k * d))
    proj_sum = np.zeros((d, d))
    for j in range(k):
        proj_sum = proj_sum + np.outer(U[:, j], U[:, j])
        diag = -C + float(U[:, j] @ CU[:, j]) * eye + 2.0 * proj_sum @ C
        J[j * d : (j + 1) * d, j * d : (j + 1) * d] = diag
        for l in range(j):
            J[j * d : (j + 1) * d, l * d : (l + 1) * d] = 2.0 * (
                float(U[:, l] @ CU[:, j]) * eye + np.outer(U[:, l], CU[:, j])
            )
    return J


# ---------------------------------------------------------------------------
# Square root, penalty limit, soft-threshold map
# ---------------------------------------------------------------------------


def matrix_sqrt(S, clamp=1e-12, neg_tol=1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below ``clamp`` times the largest are set to zero; a negative
    eigenvalue larger than ``neg_tol`` times the largest raises KernelError.
    """
    S = np.asarray(S, dtype=float)
    amax = float(np.max(np.abs(S))) if S.size else 0.0
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-10 * max(amax, 1e-300):
        raise ConfigError("matrix_sqrt needs a symmetric matrix")
    if amax == 0.0:
        return np.zeros_like(S)
    eig = sym_eig(0.5 * (S + S.T))
    top = eig.values[-1]
    if eig.values[0] < -neg_tol * max(top, 0.0) or top <= 0:
        if top <= 0 and eig.values[0] >= -neg_tol * amax:
            return np.zeros_like(S)
        raise KernelError(f"kernel is not positive semi-definite (min eigenvalue {eig.values[0]:.3g})")
    vals = np.where(eig.values < clamp * top, 0.0, eig.values)
    R = (eig.vectors * np.sqrt(vals)) @ eig.vectors.T
    return 0.5 * (R + R.T)


def g_ddagger(schedule: TuningSchedule, t: float) -> float:
    """Limit of g(floor(t/gamma), gamma) / sqrt(gamma) as gamma -> 0."""
    if isinstance(schedule, Zero):
        return 0.0
    if isinstance(schedule, PowerLaw):
        x = t - schedule.t0
        return schedule.c * x**schedule.mu if x > 0 else 0.0
    if isinstance(schedule, SimPowerLaw):
        return t**schedule.mu if t > 0 else 0.0
    if isinstance(schedule, Rda):
        raise ConfigError("the RDA schedule has no sqrt(gamma)-scaled limit")
    raise ConfigError(f"unknown schedule {schedule!r}")


def soft_threshold_limit(V, signs, level: float) -> np.ndarray:
    """Coordinate-wise limit map given the mean-path signs.

    sign +1 -> V - level; sign -1 -> V + level; sign 0 -> sgn(V)(|V| - level)_+.
    ``signs`` may be an array of signs or a (SignPattern, t) pair.
    """
    if isinstance(signs, tuple) and isinstance(signs[0], SignPattern):
        signs = signs[0].sign_at(signs[1])
    V = np.asarray(V, dtype=float)
    signs = np.asarray(signs, dtype=float)
    shifted = V - signs * level
    thresholded = np.sign(V) * np.maximum(np.abs(V) - level, 0.0)
    return np.where(signs == 0, thresholded, shifted)


# ---------------------------------------------------------------------------
# Euler-Maruyama simulation and bands
# ---------------------------------------------------------------------------


@dataclass
class BandEnsemble:
    grid: np.ndarray
    V: np.ndarray  # (paths, grid, dim)
    W: np.ndarray
    n_excluded: int = 0


@dataclass
class Band:
    grid: np.ndarray
    mean: np.ndarray  # (grid, dim)
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class SdeCoefficients:
    """Drift Jacobian, diffusion root, signs and threshold level per grid point."""

    grid: np.ndarray
    jac: np.ndarray  # (grid, dim, dim)
    root: np.ndarray  # (grid, dim, dim)
    signs: np.ndarray  # (grid, dim)
    level: np.ndarray  # (grid,)


def sde_coefficients(model, traj: MeanTrajectory, schedule: TuningSchedule, kernel: KernelSpec, dt: float,
                     zero_tol=None) -> SdeCoefficients:
    M = int(round((traj.grid[-1] - traj.grid[0]) / dt))
    if M < 1 or abs(M * dt - (traj.grid[-1] - traj.grid[0])) > 1e-9 * max(1.0, traj.grid[-1]):
        raise ConfigError(f"dt={dt} does not divide the trajectory horizon")
    grid = traj.grid[0] + np.arange(M + 1) * dt
    points = traj.at(grid)
    pattern = sign_stable_intervals(MeanTrajectory(grid, points, traj.meta), zero_tol)
    dim = points.shape[1]
    jac = np.empty((M + 1, dim, dim))
    root = np.empty((M + 1, dim, dim))
    for m in range(M + 1):
        jac[m] = grad_G(model, points[m])
        root[m] = matrix_sqrt(kernel_at(model, points[m], kernel))
    level = np.array([g_ddagger(schedule, t) for t in grid])
    return SdeCoefficients(grid, jac, root, pattern.signs, level)


def path_increments(rng: RngStream, n_paths: int, n_steps: int, dim: int, start: int = 0) -> np.ndarray:
    """Standard-normal increments; path p uses stream ``rng_split(rng, start + p)``."""
    out = np.empty((n_paths, n_steps, dim))
    for p in range(n_paths):
        out[p] = rng_split(rng, start + p).normal((n_steps, dim))
    return out


def simulate_V(model, traj: MeanTrajectory, schedule: TuningSchedule, n_paths: int, dt: float, rng=None,
               kernel: Optional[KernelSpec] = None, increments=None, coefficients: Optional[SdeCoefficients] = None,
               zero_tol=None) -> BandEnsemble:
    """Euler-Maruyama paths of V with W = soft_threshold_limit(V) along the way.

    ``increments`` (paths x steps x dim standard normals) may be supplied to
    couple runs; otherwise they are drawn from per-path child streams of
    ``rng``.  Paths that become non-finite are dropped and counted.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if coefficients is None:
        if kernel is None:
            kernel = GaussianExact(model)
        coefficients = sde_coefficients(model, traj, schedule, kernel, dt, zero_tol)
    co = coefficients
    M = co.grid.size - 1
    dim = co.signs.shape[1]
    if increments is None:
        if rng is None:
            raise ConfigError("simulate_V needs an RNG stream or explicit increments")
        increments = path_increments(rng, n_paths, M, dim)
    increments = np.asarray(increments, dtype=float)
    if increments.shape != (n_paths, M, dim):
        raise ConfigError(f"increments must have shape {(n_paths, M, dim)}, got {increments.shape}")

    sq = math.sqrt(dt)
    V = np.zeros((n_paths, M + 1, dim))
    W = np.zeros((n_paths, M + 1, dim))
    v = np.zeros((n_paths, dim))
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(M):
            w = soft_threshold_limit(v, co.signs[m], co.level[m])
            W[:, m] = w
            v = v - rowwise_matvec(w, co.jac[m]) * dt + rowwise_matvec(increments[:, m], co.root[m]) * sq
            V[:, m + 1] = v
        W[:, M] = soft_threshold_limit(v, co.signs[M], co.level[M])
    ok = np.all(np.isfinite(V), axis=(1, 2)) & np.all(np.isfinite(W), axis=(1, 2))
    n_bad = int(np.sum(~ok))
    if n_bad:
        V, W = V[ok], W[ok]
    return BandEnsemble(co.grid, V, W, n_bad)


def band_from_quantiles(ens: BandEnsemble, alpha: float, traj: MeanTrajectory, gamma: float, min_paths=100) -> Band:
    """w(t) + sqrt(gamma) * [Q_{alpha/2}, Q_{1-alpha/2}] of the W paths (type-7 quantiles)."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if ens.W.shape[0] < min_paths:
        raise ConfigError(f"band needs at least {min_paths} paths, got {ens.W.shape[0]}")
    q = np.quantile(ens.W, [alpha / 2, 1 - alpha / 2], axis=0, method="linear")
    mean = traj.at(ens.grid)
    rg = math.sqrt(gamma)
    lower = mean + rg * q[0]
    upper = mean + rg * q[1]
    return Band(ens.grid, mean, np.minimum(lower, upper), np.maximum(lower, upper))
