"""Data models and stochastic gradients: sparse linear regression and sparse PCA.

Gaussian designs are sampled through the eigen-factor ``F = P sqrt(D)`` of the
covariance, one standard-normal vector per sample.  A linear-regression sample
consumes exactly ``d + 1`` normals (``d`` for ``x`` and one for the noise), a
PCA sample exactly ``d``, so chunked and one-at-a-time sampling stay aligned on
the same stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, FactorizationError, NonFiniteInputError
from .numerics import RngStream, sym_eig
from .optimizer import TuningSchedule, prox_l1, tuning_value


def rowwise_matvec(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Return ``X @ A.T`` over the last axis with a fixed summation order.

    BLAS may pick different kernels for different batch sizes; this keeps
    each output row a function of its own input row only.
    """
    out = np.zeros(X.shape[:-1] + (A.shape[0],))
    for k in range(A.shape[1]):
        out += X[..., k : k + 1] * A[:, k]
    return out


def build_ar_covariance(d: int, rho: float) -> np.ndarray:
    """Toeplitz covariance H_ij = rho ** |i - j|."""
    if d < 1:
        raise ConfigError(f"dimension must be positive, got {d}")
    if not abs(rho) < 1:
        raise ConfigError(f"AR coefficient must satisfy |rho| < 1, got {rho}")
    idx = np.arange(d)
    lag = np.abs(idx[:, None] - idx[None, :])
    return np.where(lag == 0, 1.0, float(rho) ** lag)


def _eigen_factor(S: np.ndarray, what: str, cond_limit: float, allow_singular=False):
    eig = sym_eig(S)
    vals = eig.values
    top = vals[-1]
    if top <= 0:
        raise FactorizationError(f"{what} has no positive eigenvalue")
    if allow_singular:
        if vals[0] < -1e-10 * top:
            raise FactorizationError(f"{what} is not positive semi-definite (min eigenvalue {vals[0]:.3g})")
    elif vals[0] <= top / cond_limit:
        raise ConfigError(
            f"{what} eigenvalues must lie in (1/C, C); got range [{vals[0]:.3g}, {top:.3g}]"
        )
    factor = eig.vectors * np.sqrt(np.clip(vals, 0.0, None))
    return eig, factor


@dataclass(frozen=True)
class LinearModel:
    """Y = X^T w* + sigma_eps * z with X ~ N(0, H)."""

    H: np.ndarray
    factor: np.ndarray
    w_star: np.ndarray
    sigma_eps: float
    eigvals: np.ndarray

    @classmethod
    def build(cls, H, w_star, sigma_eps=1.0, cond_limit=1e8) -> "LinearModel":
        H = np.array(H, dtype=float)
        w_star = np.array(w_star, dtype=float)
        if H.shape != (w_star.size, w_star.size):
            raise ConfigError(f"H shape {H.shape} does not match w* of length {w_star.size}")
        if not sigma_eps >= 0:
            raise ConfigError(f"sigma_eps must be non-negative, got {sigma_eps}")
        eig, factor = _eigen_factor(H, "H", cond_limit)
        return cls(H=H, factor=factor, w_star=w_star, sigma_eps=float(sigma_eps), eigvals=eig.values)

    @property
    def d(self) -> int:
        return self.w_star.size


def draw_sparse_coefficients(d: int, support: int, rng: RngStream, min_magnitude=None) -> np.ndarray:
    """Random support of the given size with standard-normal active values."""
    if not 0 <= support <= d:
        raise ConfigError(f"support size must be in [0, {d}], got {support}")
    order = np.argsort(rng.uniform(d), kind="stable")
    active = np.sort(order[:support])
    values = rng.normal(support) if support else np.zeros(0)
    if min_magnitude is not None:
        values = np.where(values < 0, -1.0, 1.0) * np.maximum(np.abs(values), float(min_magnitude))
    w = np.zeros(d)
    w[active] = values
    return w


def sample_lr(model: LinearModel, rng: RngStream):
    """One draw (x, y)."""
    X, y = sample_lr_batch(model, rng, 1)
    return X[0], float(y[0])


def sample_lr_batch(model: LinearModel, rng: RngStream, n: int):
    """``n`` consecutive draws; identical to ``n`` calls of :func:`sample_lr`."""
    z = rng.normal((n, model.d + 1))
    return lr_from_normals(model, z)


def lr_from_normals(model: LinearModel, z: np.ndarray):
    """Map standard normals of shape (..., d+1) to (x, y)."""
    x = rowwise_matvec(z[..., :-1], model.factor)
    y = np.sum(x * model.w_star, axis=-1) + model.sigma_eps * z[..., -1]
    return x, y


def lsq_gradient(w, x, y) -> np.ndarray:
    """Stochastic least-squares gradient -x (y - x^T w); broadcasts over leading axes."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    resid = np.asarray(y, dtype=float) - np.sum(x * w, axis=-1)
    return -x * resid[..., None] if x.ndim > 1 else -x * resid


# ---------------------------------------------------------------------------
# Sparse PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpcaModel:
    """X ~ N(0, C) where the top-k eigenvectors of C are the columns of U_star."""

    C: np.ndarray
    factor: np.ndarray
    U_star: np.ndarray
    eigvals: np.ndarray

    @classmethod
    def build(cls, C, U_star) -> "SpcaModel":
        C = np.array(C, dtype=float)
        U_star = np.array(U_star, dtype=float)
        if U_star.ndim == 1:
            U_star = U_star[:, None]
        d, k = U_star.shape
        if C.shape != (d, d):
            raise ConfigError(f"C shape {C.shape} does not match U* with d={d}")
        if np.max(np.abs(U_star.T @ U_star - np.eye(k))) > 1e-10:
            raise ConfigError("columns of U* must be orthonormal")
        eig, factor = _eigen_factor(C, "C", np.inf, allow_singular=True)
        vals = eig.values[::-1]
        if k < d:
            gaps = vals[: k] - vals[1 : k + 1]
        else:
            gaps = vals[: k - 1] - vals[1:k]
        if np.any(gaps <= 1e-10 * vals[0]):
            raise ConfigError("the k largest eigenvalues of C must be distinct and separated from the rest")
        lam = np.einsum("ij,ik,kj->j", U_star, C, U_star)
        if np.max(np.abs(C @ U_star - U_star * lam)) > 1e-8 * vals[0] or np.any(
            np.abs(lam - vals[:k]) > 1e-8 * vals[0]
        ):
            raise ConfigError("columns of U* must be the leading eigenvectors of C in decreasing order")
        return cls(C=C, factor=factor, U_star=U_star, eigvals=lam)

    @property
    def d(self) -> int:
        return self.U_star.shape[0]

    @property
    def k(self) -> int:
        return self.U_star.shape[1]


def block_components(d: int, k: int, active: int) -> np.ndarray:
    """Orthonormal sparse components supported on consecutive coordinate blocks."""
    if k * active > d or active < 1:
        raise ConfigError(f"cannot place {k} blocks of {active} active loadings in d={d}")
    U = np.zeros((d, k))
    for j in range(k):
        U[j * active : (j + 1) * active, j] = 1.0 / math.sqrt(active)
    return U


def spiked_covariance(U_all: np.ndarray, spikes) -> np.ndarray:
    """C = sum_j spike_j u_j u_j^T + I."""
    spikes = np.asarray(spikes, dtype=float)
    if U_all.shape[1] != spikes.size:
        raise ConfigError("need one spike per component")
    return (U_all * spikes) @ U_all.T + np.eye(U_all.shape[0])


def sample_pca_batch(model: SpcaModel, rng: RngStream, n: int) -> np.ndarray:
    return rowwise_matvec(rng.normal((n, model.d)), model.factor)


def deflation_matrix(U, j: int) -> np.ndarray:
    """A_j = I - u_j u_j^T - 2 sum_{i<j} u_i u_i^T, with ``j`` counted from 1."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    d, k = U.shape
    if not 1 <= j <= k:
        raise ConfigError(f"component index must be in 1..{k}, got {j}")
    uj = U[:, j - 1]
    A = np.eye(d) - np.outer(uj, uj)
    for i in range(j - 1):
        A -= 2.0 * np.outer(U[:, i], U[:, i])
    return A


def pca_drift(C, U) -> np.ndarray:
    """Mean-field update direction: column j is A_j C u_j (equals -G_j)."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    return np.column_stack([deflation_matrix(U, j + 1) @ (C @ U[:, j]) for j in range(U.shape[1])])


@dataclass(frozen=True)
class PcaState:
    U_tilde: np.ndarray
    U: np.ndarray
    n: int
    gamma: float

    @classmethod
    def initial(cls, U0, gamma: float) -> "PcaState":
        if not gamma > 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        U0 = np.array(U0, dtype=float)
        if U0.ndim == 1:
            U0 = U0[:, None]
        return cls(U_tilde=U0.copy(), U=U0.copy(), n=0, gamma=float(gamma))


def deflated_products(U: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Columns A_j x (x^T u_j) for the batched layout ``U[..., j, :]``.

    ``U`` has shape (..., k, d) (components as rows) and ``x`` shape (..., d).
    """
    proj = np.sum(U * x[..., None, :], axis=-1)  # (..., k): u_j^T x
    k = U.shape[-2]
    out = np.empty_like(U)
    acc = np.zeros_like(x)  # sum_{i<j} u_i (u_i^T x)
    for j in range(k):
        uj = U[..., j, :]
        pj = proj[..., j : j + 1]
        out[..., j, :] = (x - uj * pj - 2.0 * acc) * pj
        acc = acc + uj * pj
    return out


def ospca_step(state: PcaState, x, schedule: TuningSchedule) -> PcaState:
    """One OSPCA update; with the zero schedule this is the deflated Oja rule."""
    x = np.asarray(x, dtype=float)
    if x.shape != (state.U.shape[0],):
        raise ConfigError(f"sample of shape {x.shape} does not match d={state.U.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError(f"non-finite sample at step {state.n + 1}", step=state.n + 1)
    upd = deflated_products(state.U.T, x).T
    U_tilde = state.U_tilde + state.gamma * upd
    n_next = state.n + 1
    U = prox_l1(U_tilde, tuning_value(schedule, n_next, state.gamma))
    return replace(state, U_tilde=U_tilde, U=U, n=n_next)
