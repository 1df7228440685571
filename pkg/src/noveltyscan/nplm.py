"""Nystrom kernel two-sample test.

A Gaussian kernel expansion f_w(x) = sum_i w_i k(x, c_i) is fit as a
weighted, ridge-regularized logistic regression between a reference
sample (label 0) and an observed sample (label 1); the maximized
likelihood ratio becomes the test statistic.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .errors import (ConvergenceError, DegenerateDataError,
                     NumericalOverflowError)

MODEL_MAGIC = b"NVKM"
_F_CLIP = 500.0   # exp() overflow guard for the test statistic


@dataclass
class KernelModel:
    centers: np.ndarray   # (M, d)
    width: float
    weights: np.ndarray   # (M,)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.width <= 0:
            raise ValueError("kernel width must be positive")
        if self.weights.shape != (self.centers.shape[0],):
            raise ValueError("weights length must match center count")

    def evaluate(self, points):
        return kernel_matrix(points, self.centers, self.width) @ self.weights


@dataclass
class NplmConfig:
    n_centers: int | None = None   # default round(sqrt(n_R + n_D))
    ridge: float = 1e-6
    widths: list = field(default_factory=list)
    w_ref: float | None = None     # default n_D / n_R
    max_iterations: int = 100
    grad_tolerance: float = 1e-7
    standardize: bool = True

    def __post_init__(self):
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be strictly positive")


def select_kernel_widths(reference_embeddings, subsample=2000, rng_seed=0):
    """Quantile-based width ladder from pairwise distances.

    Returns [q1, q25, q50, q75, q99, 2*q99] of the nonzero Euclidean
    pairwise distances on a uniform subsample.
    """
    x = np.atleast_2d(np.asarray(reference_embeddings, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    rng = np.random.default_rng(rng_seed)
    if n > subsample:
        idx = rng.choice(n, size=subsample, replace=False)
        x = x[idx]
    d = cdist(x, x)
    d = d[np.triu_indices(x.shape[0], k=1)]
    d = d[d > 0]
    if d.size == 0:
        raise DegenerateDataError("all subsampled points are identical")
    qs = np.quantile(d, [0.01, 0.25, 0.50, 0.75, 0.99])
    return [float(q) for q in qs] + [float(2.0 * qs[-1])]


def default_n_centers(n_ref, n_data):
    return int(round(np.sqrt(n_ref + n_data)))


def build_centers(pool, n_centers, rng_seed):
    """Uniform sample without replacement from the pooled points."""
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if n_centers > pool.shape[0]:
        raise ValueError("cannot draw more centers than pool points")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(pool.shape[0], size=n_centers, replace=False)
    return pool[idx].copy()


def kernel_matrix(points, centers, width):
    """Gaussian kernel matrix exp(-||x - c||^2 / (2 width^2))."""
    if width <= 0:
        raise ValueError("width must be positive")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    sq = cdist(points, centers, "sqeuclidean")
    return np.exp(-sq / (2.0 * width * width))


def _softplus(f):
    """log(1 + e^f), stable for large |f|."""
    return np.logaddexp(0.0, f)


def _sigmoid(f):
    out = np.empty_like(f)
    pos = f >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-f[pos]))
    e = np.exp(f[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def nplm_objective(w, K, y, w_ref, ridge, K_centers):
    """Weighted logistic loss with kernel ridge term.

    loss = sum[ w_ref*(1-y)*softplus(f) + y*softplus(-f) ]
           + ridge * w^T K_centers w,   with f = K @ w.
    Returns (loss, gradient).
    """
    f = K @ w
    if not np.all(np.isfinite(f)):
        bad = int(np.flatnonzero(~np.isfinite(f))[0])
        raise NumericalOverflowError(f"non-finite model output at row {bad}")
    row_w = np.where(y == 0, w_ref, 0.0)
    loss = float(np.sum(row_w * _softplus(f) + y * _softplus(-f))
                 + ridge * w @ (K_centers @ w))
    sig = _sigmoid(f)
    resid = row_w * sig - y * (1.0 - sig)
    grad = K.T @ resid + 2.0 * ridge * (K_centers @ w)
    return loss, grad


def _nplm_hessian(w, K, y, w_ref, ridge, K_centers):
    f = K @ w
    sig = _sigmoid(f)
    row_w = np.where(y == 0, w_ref, 1.0)
    d = row_w * sig * (1.0 - sig)
    return (K * d[:, None]).T @ K + 2.0 * ridge * K_centers


def _solve_spd(hess, rhs):
    """Newton-step solve; Cholesky with escalating damping on failure."""
    m = hess.shape[0]
    scale = np.trace(hess) / m
    damping = 0.0
    for _ in range(8):
        try:
            c = cho_factor(hess + damping * scale * np.eye(m), lower=True)
            return cho_solve(c, rhs)
        except np.linalg.LinAlgError:
            damping = 1e-12 if damping == 0.0 else damping * 100.0
    raise ConvergenceError("Hessian solve failed at maximum damping")


def _chol_with_jitter(mat):
    """Lower Cholesky factor, escalating a tiny diagonal jitter as
    needed for matrices that are positive definite only up to
    round-off."""
    m = mat.shape[0]
    scale = np.trace(mat) / m
    jitter = 0.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(mat + jitter * scale * np.eye(m))
        except np.linalg.LinAlgError:
            jitter = 1e-14 if jitter == 0.0 else jitter * 100.0
    raise ConvergenceError("center kernel matrix is not positive definite")


def _minimize_newton(K, y, w_ref, ridge, K_centers, max_iterations,
                     grad_tolerance):
    """Full-batch damped Newton with backtracking line search.

    For wide kernels the eigenvalues of K_centers span ~12 decades, so
    the ridge curvature 2*ridge*K_centers drowns in round-off of the
    data term and the Hessian in w is numerically indefinite.  The
    iteration therefore runs in the whitened variable u = L^T w with
    K_centers = L L^T: the penalty becomes an explicit ridge*||u||^2,
    and the Hessian (B diag(d) B^T-style Gram plus 2*ridge*I, with
    B = K L^-T) is positive definite by construction.  Newton steps are
    invariant under this change of variable; only their floating-point
    accuracy improves.  Convergence is still measured on the gradient
    in the original variable, evaluated through the algebraically
    identical but numerically stable route grad_w = L grad_u (the
    direct w-space evaluation bottoms out near 1e-7 because ||w|| can
    reach ~1e6 while K w stays O(1), a pure cancellation artifact).
    """
    m = K.shape[1]
    L = _chol_with_jitter(K_centers)
    B = solve_triangular(L, K.T, lower=True).T
    row_w = np.where(y == 0, w_ref, 0.0)

    def objective(u):
        f = B @ u
        if not np.all(np.isfinite(f)):
            bad = int(np.flatnonzero(~np.isfinite(f))[0])
            raise NumericalOverflowError(
                f"non-finite model output at row {bad}")
        loss = float(np.sum(row_w * _softplus(f) + y * _softplus(-f))
                     + ridge * u @ u)
        sig = _sigmoid(f)
        resid = row_w * sig - y * (1.0 - sig)
        grad = B.T @ resid + 2.0 * ridge * u
        return loss, grad, sig

    u = np.zeros(m)
    loss, grad, sig = objective(u)
    for iteration in range(max_iterations):
        gnorm = float(np.linalg.norm(L @ grad))
        if gnorm < grad_tolerance:
            break
        d = np.where(y == 0, w_ref, 1.0) * sig * (1.0 - sig)
        hess = (B * d[:, None]).T @ B + 2.0 * ridge * np.eye(m)
        step = _solve_spd(hess, -grad)
        # backtracking line search on the Armijo condition; near the
        # optimum the loss decrease falls below float noise, so a step
        # that clearly shrinks the gradient is also accepted
        t = 1.0
        slope = grad @ step
        if slope >= 0:   # non-descent solve fallback: steepest descent
            step = -grad
            slope = -float(grad @ grad)
        for _ in range(60):
            u_new = u + t * step
            loss_new, grad_new, sig_new = objective(u_new)
            if loss_new <= loss + 1e-4 * t * slope:
                break
            if (loss_new <= loss + 1e-10 * abs(loss)
                    and np.linalg.norm(grad_new) < 0.5 * np.linalg.norm(grad)):
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed", grad_norm=gnorm)
        u, loss, grad, sig = u_new, loss_new, grad_new, sig_new
    else:
        iteration = max_iterations
    w = solve_triangular(L, u, lower=True, trans="T")
    gnorm = float(np.linalg.norm(L @ grad))
    if gnorm >= grad_tolerance:
        raise ConvergenceError(
            f"no convergence after {max_iterations} Newton iterations "
            f"(grad norm {gnorm:.3e})", grad_norm=gnorm)
    return w, gnorm, iteration


def fit(reference, observed, width, config, rng_seed=0, centers=None):
    """Fit the kernel model for one width. Returns a KernelModel.

    Centers default to a fresh uniform draw from the pooled sample;
    pass `centers` to share one draw across widths.
    """
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    n_ref, n_data = reference.shape[0], observed.shape[0]
    if centers is None:
        m = config.n_centers or default_n_centers(n_ref, n_data)
        centers = build_centers(np.vstack([reference, observed]), m,
                                rng_seed)
    w_ref = config.w_ref if config.w_ref is not None else n_data / n_ref
    pooled = np.vstack([reference, observed])
    y = np.concatenate([np.zeros(n_ref), np.ones(n_data)])
    K = kernel_matrix(pooled, centers, width)
    K_centers = kernel_matrix(centers, centers, width)
    w, _, _ = _minimize_newton(K, y, w_ref, config.ridge, K_centers,
                                  config.max_iterations,
                                  config.grad_tolerance)
    return KernelModel(centers, float(width), w)


def test_statistic(model, reference, observed, w_ref):
    """Maximized log-likelihood-ratio statistic of the fitted model."""
    f_ref = model.evaluate(reference)
    f_obs = model.evaluate(observed)
    if np.max(f_ref, initial=-np.inf) > _F_CLIP:
        raise NumericalOverflowError("exp overflow in reference term")
    return float(-2.0 * (np.sum(w_ref * (np.exp(f_ref) - 1.0))
                         - np.sum(f_obs)))


def standardize_by_reference(reference, observed):
    """Per-dimension shift/scale by the reference mean and std."""
    mean = reference.mean(axis=0)
    std = reference.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (reference - mean) / std, (observed - mean) / std


def run_test(reference, observed, config, rng_seed):
    """Fit every configured width with shared centers.

    Returns a list of per-width dicts in input width order. Inputs are
    standardized by the reference sample when config.standardize is set.
    """
    if not config.widths:
        raise ValueError("config.widths must be populated")
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    if config.standardize:
        reference, observed = standardize_by_reference(reference, observed)
    n_ref, n_data = reference.shape[0], observed.shape[0]
    m = config.n_centers or default_n_centers(n_ref, n_data)
    centers = build_centers(np.vstack([reference, observed]), m, rng_seed)
    w_ref = config.w_ref if config.w_ref is not None else n_data / n_ref

    pooled = np.vstack([reference, observed])
    y = np.concatenate([np.zeros(n_ref), np.ones(n_data)])
    sq_pool = cdist(pooled, centers, "sqeuclidean")
    sq_cent = cdist(centers, centers, "sqeuclidean")

    results = []
    for width in config.widths:
        K = np.exp(-sq_pool / (2.0 * width * width))
        K_centers = np.exp(-sq_cent / (2.0 * width * width))
        try:
            w, gnorm, iters = _minimize_newton(
                K, y, w_ref, config.ridge, K_centers,
                config.max_iterations, config.grad_tolerance)
        except (ConvergenceError, NumericalOverflowError) as exc:
            raise type(exc)(f"width {width}: {exc}") from exc
        t = float(-2.0 * (np.sum(w_ref * (np.exp(K[:n_ref] @ w) - 1.0))
                          - np.sum(K[n_ref:] @ w)))
        results.append({"width": float(width), "t": t, "n_ref": n_ref,
                        "n_data": n_data, "w_ref": float(w_ref),
                        "lambda": config.ridge, "iterations": int(iters),
                        "grad_norm": float(gnorm), "seed": int(rng_seed)})
    return results


def save_model(model, path):
    """Debug dump: magic, M, d, width, centers, weights."""
    m, d = model.centers.shape
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IId", m, d, model.width))
        fh.write(np.ascontiguousarray(model.centers, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise ValueError("bad model magic")
        m, d, width = struct.unpack("<IId", fh.read(16))
        centers = np.frombuffer(fh.read(8 * m * d),
                                dtype="<f8").reshape(m, d).copy()
        weights = np.frombuffer(fh.read(8 * m), dtype="<f8").copy()
    return KernelModel(centers, width, weights)
