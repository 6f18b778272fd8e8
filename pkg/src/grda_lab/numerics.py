"""Numeric substrate: symmetric eigensolver, RK45, adaptive quadrature, RNG streams.

Everything here is deterministic and free of BLAS-order effects so that
experiments reproduce bit-for-bit regardless of how work is batched.

RNG design
----------
``RngStream(seed, stream_id)`` is a Philox4x64-10 counter-based generator
whose 128-bit key is ``seed | stream_id << 64``.  The 256-bit counter is
incremented before each block of four 64-bit words, so the first block is
Philox(counter=1, key).  Uniform doubles are ``((k >> 11) + 0.5) * 2**-53`` for each raw
64-bit output ``k`` (so they lie strictly inside (0, 1)), and normal
variates are obtained by applying Wichura's AS241 inverse normal CDF to
exactly one uniform each.  Child streams are derived with
``rng_split(base, label)``, which keeps the seed and replaces the stream id
by ``splitmix64(base.stream_id ^ splitmix64(label))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FactorizationError, IntegrationError, QuadratureError

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenPair:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # orthonormal columns


def sym_eig(A, tol=1e-12, max_sweeps=100) -> EigenPair:
    """Eigen-decompose a symmetric matrix with the cyclic Jacobi method.

    Sweeps continue until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``.  Eigenvalues are returned in ascending order.
    """
    A = np.array(A, dtype=float, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"sym_eig needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise FactorizationError("sym_eig: matrix has non-finite entries")
    n = A.shape[0]
    amax = np.max(np.abs(A)) if n else 0.0
    if n and np.max(np.abs(A - A.T)) > 1e-10 * amax:
        raise FactorizationError("sym_eig: matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    fro = np.linalg.norm(A)
    if n <= 1 or fro == 0.0:
        return EigenPair(np.diag(A).copy(), V)

    target = tol * fro
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app, aqq = A[p, p], A[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                v_p = V[:, p].copy()
                v_q = V[:, q]
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
    else:
        raise FactorizationError(f"sym_eig: no convergence after {max_sweeps} sweeps")

    values = np.diag(A).copy()
    order = np.argsort(values, kind="stable")
    return EigenPair(values[order], V[:, order])


# ---------------------------------------------------------------------------
# Dormand-Prince RK45
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


class OdeSolution:
    """Accepted RK45 steps with cubic Hermite dense output."""

    def __init__(self, ts, ys, fs, n_rejected=0):
        self.t = np.asarray(ts, dtype=float)
        self.y = np.asarray(ys, dtype=float)
        self.f = np.asarray(fs, dtype=float)
        self.n_rejected = n_rejected

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.t[0], self.t[-1]
        if np.any(t_arr < lo - 1e-12 * max(1.0, abs(lo))) or np.any(
            t_arr > hi + 1e-12 * max(1.0, abs(hi))
        ):
            raise ValueError("requested time outside the integrated span")
        if len(self.t) == 1:
            out = np.repeat(self.y[:1], len(t_arr), axis=0)
        else:
            idx = np.clip(np.searchsorted(self.t, t_arr, side="right") - 1, 0, len(self.t) - 2)
            t0, t1 = self.t[idx], self.t[idx + 1]
            h = (t1 - t0)[:, None]
            s = ((t_arr - t0) / (t1 - t0))[:, None]
            y0, y1 = self.y[idx], self.y[idx + 1]
            f0, f1 = self.f[idx], self.f[idx + 1]
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            out = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
        return out[0] if np.ndim(t) == 0 else out


def rk45(f, y0, t_span, rel_tol=1e-8, abs_tol=1e-10, max_step=np.inf, first_step=None):
    """Integrate ``y' = f(t, y)`` with the Dormand-Prince 5(4) pair.

    Returns an :class:`OdeSolution`; call it with times in ``t_span`` for
    dense output.  Raises :class:`IntegrationError` if the step size
    underflows.
    """
    t0, t_end = float(t_span[0]), float(t_span[1])
    if t_end < t0:
        raise ConfigError("rk45 integrates forward in time only")
    y = np.array(y0, dtype=float).ravel()
    fy = np.asarray(f(t0, y), dtype=float).ravel()
    ts, ys, fs = [t0], [y.copy()], [fy.copy()]
    if t_end == t0:
        return OdeSolution(ts, ys, fs)

    def err_norm(err, y_old, y_new):
        scale = abs_tol + rel_tol * np.maximum(np.abs(y_old), np.abs(y_new))
        return float(np.sqrt(np.mean((err / scale) ** 2)))

    if first_step is None:
        scale = abs_tol + rel_tol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((fy / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, t_end - t0)
        y1 = y + h0 * fy
        f1 = np.asarray(f(t0 + h0, y1), dtype=float).ravel()
        d2 = np.sqrt(np.mean(((f1 - fy) / scale) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        h = min(100 * h0, h1)
    else:
        h = float(first_step)
    h = min(h, max_step, t_end - t0)

    t = t0
    n_rejected = 0
    k = np.empty((7, y.size))
    while t < t_end:
        min_step = 16 * np.finfo(float).eps * max(abs(t), 1.0)
        if h < min_step:
            raise IntegrationError(f"rk45 step size underflow at t={t}", last_time=t)
        h = min(h, t_end - t)
        k[0] = fy
        for i in range(1, 7):
            yi = y + h * (np.asarray(_DP_A[i]) @ k[:i])
            k[i] = np.asarray(f(t + _DP_C[i] * h, yi), dtype=float).ravel()
        y_new = y + h * (_DP_B @ k)
        err = h * (_DP_E @ k)
        en = err_norm(err, y, y_new)
        if not np.all(np.isfinite(y_new)):
            en = np.inf
        if en <= 1.0:
            t = t + h if t_end - (t + h) > min_step else t_end
            y = y_new
            fy = k[6].copy()
            ts.append(t)
            ys.append(y.copy())
            fs.append(fy)
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** (-1 / 5))
            h = min(h * fac, max_step)
        else:
            n_rejected += 1
            fac = 0.2 if not np.isfinite(en) else max(0.2, 0.9 * en ** (-1 / 5))
            h = h * fac
    return OdeSolution(ts, ys, fs, n_rejected)


# ---------------------------------------------------------------------------
# Adaptive Simpson quadrature
# ---------------------------------------------------------------------------


def adaptive_quad(f, a, b, rel_tol=1e-8, abs_tol=1e-14, max_depth=60):
    """Adaptive Simpson integration of a scalar function on ``[a, b]``.

    The local error estimate is driven below ``rel_tol * |result| + abs_tol``.
    Raises :class:`QuadratureError` if an interval still misses the global
    tolerance after ``max_depth`` bisections.
    """
    a, b = float(a), float(b)
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def run(tol_total):
        whole = simpson(fa, fm, fb, b - a)
        stack = [(a, b, fa, fm, fb, whole, tol_total, 0)]
        total = 0.0
        while stack:
            lo, hi, flo, fmid, fhi, est, tol, depth = stack.pop()
            mid = 0.5 * (lo + hi)
            flm = f(0.5 * (lo + mid))
            frm = f(0.5 * (mid + hi))
            left = simpson(flo, flm, fmid, mid - lo)
            right = simpson(fmid, frm, fhi, hi - mid)
            delta = left + right - est
            if abs(delta) <= 15.0 * tol:
                total += left + right + delta / 15.0
            elif depth >= max_depth and abs(delta) <= 15.0 * tol_total:
                # endpoint singularities converge slower than the halving
                # budget; accept once the residual fits the global tolerance
                total += left + right + delta / 15.0
            elif depth >= max_depth:
                raise QuadratureError(
                    f"adaptive_quad: depth {max_depth} exhausted on [{lo}, {hi}]",
                    achieved_tol=abs(delta) / 15.0,
                )
            else:
                stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * tol, depth + 1))
                stack.append((lo, mid, flo, flm, fmid, left, 0.5 * tol, depth + 1))
        return total

    # first pass with a tolerance from a cheap size estimate, then tighten if
    # the converged value turned out to be much larger than that estimate
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole0 = abs(simpson(fa, fm, fb, b - a))
    result = run(rel_tol * whole0 + abs_tol)
    tol_needed = rel_tol * abs(result) + abs_tol
    if tol_needed < rel_tol * whole0 + abs_tol:
        result = run(tol_needed)
    return sign * result


# ---------------------------------------------------------------------------
# Counter-based RNG streams
# ---------------------------------------------------------------------------


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# Wichura (1988), algorithm AS241 PPND16; relative accuracy about 1e-16.
_AS241_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
            1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
            3.3430575583588128105e4, 2.5090809287301226727e3)
_AS241_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
            2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
            5.2264952788528545610e3)
_AS241_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
            3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
            2.27238449892691845833e-2, 7.74545014278341407640e-4)
_AS241_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
            1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
            1.05075007164441684324e-9)
_AS241_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
            2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
            2.71155556874348757815e-5, 2.01033439929228813265e-7)
_AS241_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
            7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
            2.04426310338993978564e-15)


def _horner(coefs, x):
    out = np.full_like(x, coefs[-1])
    for c in coefs[-2::-1]:
        out = out * x + c
    return out


def normal_ppf(u):
    """Inverse standard normal CDF for ``u`` in (0, 1) (AS241)."""
    u = np.asarray(u, dtype=float)
    q = u - 0.5
    out = np.empty_like(u)
    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(_AS241_A, r) / _horner(_AS241_B, r)
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.sqrt(-np.log(np.where(qt < 0, u[tail], 1.0 - u[tail])))
        x = np.empty_like(r)
        near = r <= 5.0
        rn = r[near] - 1.6
        x[near] = _horner(_AS241_C, rn) / _horner(_AS241_D, rn)
        rf = r[~near] - 5.0
        x[~near] = _horner(_AS241_E, rf) / _horner(_AS241_F, rf)
        out[tail] = np.where(qt < 0, -x, x)
    return out


class RngStream:
    """A reproducible, splittable random stream (see module docstring)."""

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._bits = np.random.Philox(key=self.seed | (self.stream_id << 64))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(int(n))

    def uniform(self, size=None):
        shape = () if size is None else size
        n = int(np.prod(shape))
        k = self.raw(n)
        u = ((k >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
        return u.reshape(shape) if size is not None else float(u[0])

    def normal(self, size=None):
        shape = () if size is None else size
        n = int(np.prod(shape))
        z = normal_ppf(self.uniform(n))
        return z.reshape(shape) if size is not None else float(z[0])

    def split(self, label: int) -> "RngStream":
        return rng_split(self, label)


def rng_split(base: RngStream, label: int) -> RngStream:
    """Deterministic child stream; independent of how much ``base`` was used."""
    child = splitmix64(base.stream_id ^ splitmix64(int(label) & _MASK64))
    return RngStream(base.seed, child)
