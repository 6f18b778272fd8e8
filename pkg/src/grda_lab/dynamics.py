"""Deterministic limits: mean trajectories, RDA bias, the bias function h, sign patterns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import SpcaModel, pca_drift
from .numerics import adaptive_quad, rk45, sym_eig


@dataclass(frozen=True)
class MeanTrajectory:
    """Values of a deterministic path on an increasing time grid.

    ``values[m]`` is the state at ``grid[m]``; PCA states are stored as the
    stacked columns ``[u_1; u_2; ...]`` with ``shape = (d, k)``.
    """

    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ConfigError("trajectory grid must be strictly increasing")
        if self.values.shape[0] != self.grid.size:
            raise ConfigError("trajectory values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("trajectory has non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, t) -> np.ndarray:
        """Linear interpolation on the grid (exact at grid points)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        span = self.grid[-1] - self.grid[0]
        if np.any(t_arr < self.grid[0] - 1e-9 * span) or np.any(t_arr > self.grid[-1] + 1e-9 * span):
            raise ConfigError("time outside the trajectory grid")
        if self.grid.size == 1:
            out = np.repeat(self.values[:1], t_arr.size, axis=0)
            return out[0] if np.ndim(t) == 0 else out
        idx = np.clip(np.searchsorted(self.grid, t_arr, side="right") - 1, 0, self.grid.size - 2)
        t0, t1 = self.grid[idx], self.grid[idx + 1]
        s = np.clip((t_arr - t0) / (t1 - t0), 0.0, 1.0)[:, None]
        exact = np.isclose(t_arr, t0, rtol=0, atol=1e-12 * max(1.0, span))[:, None]
        out = np.where(exact, self.values[idx], (1 - s) * self.values[idx] + s * self.values[idx + 1])
        return out[0] if np.ndim(t) == 0 else out

    def as_matrix(self, m: int) -> np.ndarray:
        """PCA state at grid index ``m`` as a d x k matrix."""
        d, k = self.meta["shape"]
        return self.values[m].reshape(k, d).T


def uniform_grid(T: float, dt: float) -> np.ndarray:
    if not T > 0 or not dt > 0:
        raise ConfigError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    M = int(round(T / dt))
    if abs(M * dt - T) > 1e-9 * T:
        raise ConfigError(f"horizon {T} is not a multiple of dt={dt}")
    return np.arange(M + 1) * dt


def lr_mean_trajectory(H, w0, w_star, grid) -> MeanTrajectory:
    """w(t) = P e^{-Dt} P^T w0 + P (I - e^{-Dt}) P^T w* for H = P D P^T."""
    grid = np.asarray(grid, dtype=float)
    eig = sym_eig(H)
    P, D = eig.vectors, eig.values
    a = P.T @ np.asarray(w0, dtype=float)
    b = P.T @ np.asarray(w_star, dtype=float)
    decay = np.exp(-np.outer(grid, D))
    rise = -np.expm1(-np.outer(grid, D))
    coef = decay * a + rise * b
    return MeanTrajectory(grid, coef @ P.T, {"model": "lr"})


def ospca_mean_ode(model: SpcaModel, U0, grid, snap_tol=1e-6, snap_dist=1e-3, rel_tol=1e-8, abs_tol=1e-10) -> MeanTrajectory:
    """Solve dU_j/dt = A_j C U_j and snap to +-U*_j once the drift has vanished.

    Snapping happens from the first grid time at which ``||A_j C U_j|| <
    snap_tol`` for every column, and only for columns within ``snap_dist`` of
    a signed true component.
    """
    grid = np.asarray(grid, dtype=float)
    U0 = np.array(U0, dtype=float)
    if U0.ndim == 1:
        U0 = U0[:, None]
    d, k = U0.shape
    if (d, k) != model.U_star.shape:
        raise ConfigError(f"U0 shape {U0.shape} does not match the model {model.U_star.shape}")
    if np.any(np.linalg.norm(U0, axis=0) == 0):
        raise ConfigError("initial columns must be nonzero")
    C = model.C

    def rhs(t, y):
        return pca_drift(C, y.reshape(k, d).T).T.ravel()

    sol = rk45(rhs, U0.T.ravel(), (grid[0], grid[-1]), rel_tol=rel_tol, abs_tol=abs_tol)
    values = sol(grid)
    values[0] = U0.T.ravel()
    snapped_at = None
    for m in range(grid.size):
        U = values[m].reshape(k, d).T
        if np.all(np.linalg.norm(pca_drift(C, U), axis=0) < snap_tol):
            snapped_at = m
            break
    if snapped_at is not None:
        U = values[snapped_at].reshape(k, d).T.copy()
        target = U.copy()
        for j in range(k):
            u_star = model.U_star[:, j]
            s = 1.0 if np.dot(U[:, j], u_star) >= 0 else -1.0
            if np.linalg.norm(U[:, j] - s * u_star) < snap_dist:
                target[:, j] = s * u_star
        values[snapped_at:] = target.T.ravel()
    meta = {"model": "pca", "shape": (d, k), "snapped_at": None if snapped_at is None else float(grid[snapped_at])}
    return MeanTrajectory(grid, values, meta)


def rda_limit_bias(c0: float, sigma_sq: float) -> float:
    """Long-run absolute bias c0 / sigma^2 of RDA on an active coordinate."""
    if c0 < 0 or not sigma_sq > 0:
        raise ConfigError(f"need c0 >= 0 and sigma^2 > 0, got {c0}, {sigma_sq}")
    return c0 / sigma_sq


def bias_h(t, c, mu, t0, sigma_sq, sign, rel_tol=1e-8) -> float:
    """h(t) = -sign c mu int_{t0}^t (s - t0)^(mu-1) exp(-sigma^2 (t - s)) ds.

    For mu < 1 the endpoint singularity is removed with u = (s - t0)^mu.
    The integration range is split so the mass near s = t is always resolved.
    """
    if t < t0:
        raise ConfigError(f"bias_h needs t >= t0, got t={t}, t0={t0}")
    if not c > 0 or not mu > 0 or not sigma_sq > 0:
        raise ConfigError("bias_h needs c > 0, mu > 0 and sigma^2 > 0")
    tau = float(t - t0)
    if tau == 0.0:
        return 0.0
    window = 40.0 / sigma_sq
    cut = max(0.0, tau - window)

    if mu < 1:
        def f(u):
            return math.exp(-sigma_sq * (tau - u ** (1.0 / mu)))

        pieces = [(0.0, cut**mu), (cut**mu, tau**mu)]
        scale = 1.0
    else:
        def f(s):
            return s ** (mu - 1.0) * math.exp(-sigma_sq * (tau - s))

        pieces = [(0.0, cut), (cut, tau)]
        scale = mu
    total = sum(adaptive_quad(f, a, b, rel_tol=rel_tol) for a, b in pieces if b > a)
    return -float(np.sign(sign)) * c * scale * total


def bias_h_asymptote(t, c, mu, t0, sigma_sq, sign) -> float:
    """Leading-order behaviour -sign c mu sigma^-2 (t - t0)^(mu-1)."""
    return -float(np.sign(sign)) * c * mu / sigma_sq * (t - t0) ** (mu - 1.0)


# ---------------------------------------------------------------------------
# Sign patterns
# ---------------------------------------------------------------------------


def sign_with_tol(values, zero_tol=None) -> np.ndarray:
    """sgn with |x| <= zero_tol mapped to 0 (default: 1e-12 of the largest entry)."""
    values = np.asarray(values, dtype=float)
    if zero_tol is None:
        zero_tol = 1e-12 * float(np.max(np.abs(values), initial=0.0))
    s = np.sign(values)
    s[np.abs(values) <= zero_tol] = 0.0
    return s


@dataclass(frozen=True)
class SignPattern:
    """Per-coordinate maximal runs of constant sign.

    ``signs[m, j]`` is the sign of coordinate j at grid index m and
    ``intervals[j]`` lists ``(t_start, t_end, sign)`` runs covering the grid.
    """

    grid: np.ndarray
    signs: np.ndarray
    intervals: list

    def sign_at(self, t) -> np.ndarray:
        m = int(np.searchsorted(self.grid, t + 1e-9 * max(1.0, self.grid[-1]), side="right") - 1)
        return self.signs[max(m, 0)]

    def globally_stable(self, j: int) -> bool:
        return len(self.intervals[j]) == 1

    def change_times(self) -> np.ndarray:
        """Grid times at which some coordinate changes sign."""
        changed = np.any(self.signs[1:] != self.signs[:-1], axis=1)
        return self.grid[1:][changed]


def sign_stable_intervals(traj: MeanTrajectory, zero_tol=None) -> SignPattern:
    signs = sign_with_tol(traj.values, zero_tol)
    grid = traj.grid
    intervals = []
    for j in range(signs.shape[1]):
        col = signs[:, j]
        runs = []
        start = 0
        for m in range(1, grid.size + 1):
            if m == grid.size or col[m] != col[start]:
                runs.append((float(grid[start]), float(grid[m - 1]), int(col[start])))
                start = m
        intervals.append(runs)
    return SignPattern(grid, signs, intervals)
