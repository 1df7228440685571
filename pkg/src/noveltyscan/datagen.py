"""Calibrated Gaussian-mixture benchmark generator.

Builds mixtures of diagonal-covariance Gaussian clusters whose minimum
pairwise injection significance is pinned to a target (3.5 sigma by
default), appends uniform noise dimensions, and applies a random
rotation that mixes the discriminating axes into the noisy ones.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .errors import CalibrationError

MEAN_LOW, MEAN_HIGH = 0.0, 1.0
SIGMA_LOW, SIGMA_HIGH = 0.02, 0.5


@dataclass
class ClusterParams:
    """Means and per-axis standard deviations of the Gaussian clusters."""

    means: np.ndarray    # (n_clusters, dim)
    sigmas: np.ndarray   # (n_clusters, dim)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.sigmas = np.atleast_2d(np.asarray(self.sigmas, dtype=float))
        if self.means.shape != self.sigmas.shape:
            raise ValueError("means and sigmas must have matching shapes")
        if np.any(self.sigmas <= 0):
            raise ValueError("sigmas must be strictly positive")

    @property
    def n_clusters(self):
        return self.means.shape[0]

    @property
    def dim_meaningful(self):
        return self.means.shape[1]


@dataclass
class SyntheticSpec:
    """Full recipe for one synthetic dataset draw."""

    cluster_params: ClusterParams
    n_noise_dims: int
    n_per_class: int
    rotation: np.ndarray   # (D+M, D+M) orthogonal
    seed: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        d = self.cluster_params.dim_meaningful + self.n_noise_dims
        if self.rotation.shape != (d, d):
            raise ValueError(f"rotation must be {d}x{d}")
        err = np.max(np.abs(self.rotation.T @ self.rotation - np.eye(d)))
        if err >= 1e-10:
            raise ValueError(f"rotation is not orthogonal (max error {err:.2e})")
        if self.n_noise_dims < 0 or self.n_per_class <= 0:
            raise ValueError("n_noise_dims must be >= 0 and n_per_class > 0")


@dataclass
class LabeledDataset:
    """Points with integer class labels; the carrier between modules."""

    points: np.ndarray   # (n, d)
    labels: np.ndarray   # (n,)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels must have the same length")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain NaN/Inf")
        if len(self.labels) and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx):
        return LabeledDataset(self.points[idx], self.labels[idx])


def sample_cluster_params(n_clusters, dim, rng_seed):
    """Draw cluster means from U(0,1) and sigmas from U(0.02, 0.5)."""
    if n_clusters < 2:
        raise ValueError("need at least 2 clusters for pairwise calibration")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(rng_seed)
    means = rng.uniform(MEAN_LOW, MEAN_HIGH, size=(n_clusters, dim))
    sigmas = rng.uniform(SIGMA_LOW, SIGMA_HIGH, size=(n_clusters, dim))
    return ClusterParams(means, sigmas)


def _projected_1d(params, i, j):
    """Project clusters i and j onto the inter-mean axis.

    Returns (m_i, s_i, m_j, s_j): 1-D means and standard deviations
    along the unit vector from mu_i to mu_j.
    """
    mu_i, mu_j = params.means[i], params.means[j]
    axis = mu_j - mu_i
    nrm = np.linalg.norm(axis)
    if nrm == 0.0:
        axis = np.zeros_like(axis)
        axis[0] = 1.0
    else:
        axis = axis / nrm
    m_i = float(mu_i @ axis)
    m_j = float(mu_j @ axis)
    s_i = float(np.sqrt(np.sum((params.sigmas[i] * axis) ** 2)))
    s_j = float(np.sqrt(np.sum((params.sigmas[j] * axis) ** 2)))
    return m_i, s_i, m_j, s_j


def pairwise_injection_significance(params, i, j, n_bkg=10000, f_inj=0.01):
    """Threshold-optimized s/sqrt(b) for injecting cluster j into i.

    Both Gaussians are projected onto the axis mu_j - mu_i; a one-sided
    cut c is scanned along that axis with expected counts taken from the
    exact 1-D Gaussian survival functions.
    """
    if i == j:
        raise ValueError("cluster indices must differ")
    if n_bkg <= 0 or not (0.0 < f_inj < 1.0):
        raise ValueError("need n_bkg > 0 and 0 < f_inj < 1")
    m_i, s_i, m_j, s_j = _projected_1d(params, i, j)

    def neg_sig(c):
        c = np.asarray(c, dtype=float)
        s = f_inj * n_bkg * ndtr((m_j - c) / s_j)
        b = n_bkg * ndtr((m_i - c) / s_i)
        return -s / np.sqrt(np.maximum(b, 1e-9))

    lo = min(m_i - 10.0 * s_i, m_j - 10.0 * s_j)
    hi = max(m_i + 10.0 * s_i, m_j + 10.0 * s_j)
    grid = np.linspace(lo, hi, 2001)
    vals = neg_sig(grid)
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(neg_sig, bounds=(a, b), method="bounded",
                          options={"xatol": 1e-10})
    return float(-min(res.fun, vals[k]))


def min_pairwise_significance(params, n_bkg=10000, f_inj=0.01):
    """Minimum of pairwise_injection_significance over ordered pairs."""
    n = params.n_clusters
    return min(pairwise_injection_significance(params, i, j, n_bkg, f_inj)
               for i in range(n) for j in range(n) if i != j)


def calibrate_separation(params, target_z=3.5, n_bkg=10000, f_inj=0.01,
                         tolerance=0.05):
    """Rescale means about their centroid so the minimum pairwise
    injection significance hits target_z.

    A single scale factor is found by bisection; sigmas are untouched.
    """
    centroid = params.means.mean(axis=0)

    def scaled(t):
        return ClusterParams(centroid + t * (params.means - centroid),
                             params.sigmas)

    def minsig(t):
        return min_pairwise_significance(scaled(t), n_bkg, f_inj)

    t_lo, t_hi = 1e-3, 1e3
    if minsig(t_lo) > target_z or minsig(t_hi) < target_z:
        raise CalibrationError(
            f"cannot bracket target {target_z} within scale range "
            f"[{t_lo}, {t_hi}]")
    for _ in range(200):
        t_mid = np.sqrt(t_lo * t_hi)   # bisect in log space
        z = minsig(t_mid)
        if abs(z - target_z) < 0.25 * tolerance:
            break
        if z < target_z:
            t_lo = t_mid
        else:
            t_hi = t_mid
    else:
        raise CalibrationError("bisection did not converge")
    return scaled(t_mid)


def random_rotation(dim, rng_seed):
    """Haar-distributed orthogonal matrix via sign-fixed QR."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(rng_seed)
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q


def generate_dataset(spec, held_out_class=None):
    """Draw the mixture, append noise dims, rotate.

    Returns (background, signal): the held-out class goes to signal and
    is excluded from background; with held_out_class=None the signal
    dataset is empty. Per-class draws use seeds derived from
    (spec.seed, class index), so each class's points are unaffected by
    which class is held out.
    """
    params = spec.cluster_params
    n_cls = params.n_clusters
    if held_out_class is not None and not (0 <= held_out_class < n_cls):
        raise ValueError("held_out_class out of range")
    d_total = params.dim_meaningful + spec.n_noise_dims

    per_class = []
    for c in range(n_cls):
        ss = np.random.SeedSequence(entropy=int(spec.seed) & (2**64 - 1),
                                    spawn_key=(c,))
        rng = np.random.default_rng(ss)
        x = rng.normal(params.means[c], params.sigmas[c],
                       size=(spec.n_per_class, params.dim_meaningful))
        if spec.n_noise_dims:
            noise = rng.uniform(0.0, 1.0,
                                size=(spec.n_per_class, spec.n_noise_dims))
            x = np.hstack([x, noise])
        per_class.append(x @ spec.rotation.T)

    bkg_x, bkg_y = [], []
    new_label = 0
    for c in range(n_cls):
        if c == held_out_class:
            continue
        bkg_x.append(per_class[c])
        bkg_y.append(np.full(spec.n_per_class, new_label, dtype=np.int64))
        new_label += 1
    background = LabeledDataset(np.vstack(bkg_x), np.concatenate(bkg_y))
    if held_out_class is None:
        signal = LabeledDataset(np.empty((0, d_total)),
                                np.empty(0, dtype=np.int64))
    else:
        signal = LabeledDataset(
            per_class[held_out_class],
            np.zeros(spec.n_per_class, dtype=np.int64))
    return background, signal


def _stratum_counts(n, fractions):
    """Integer allocation of n items to fractions by largest remainder."""
    raw = np.asarray(fractions) * n
    base = np.floor(raw).astype(int)
    short = n - base.sum()
    order = np.argsort(-(raw - base))
    base[order[:short]] += 1
    return base


def split(dataset, fractions, rng_seed):
    """Stratified-by-class random partition into len(fractions) parts."""
    fractions = np.asarray(fractions, dtype=float)
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    if np.any(fractions <= 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    rng = np.random.default_rng(rng_seed)
    parts = [[] for _ in fractions]
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        idx = rng.permutation(idx)
        counts = _stratum_counts(len(idx), fractions)
        start = 0
        for k, cnt in enumerate(counts):
            parts[k].append(idx[start:start + cnt])
            start += cnt
    return [dataset.subset(np.concatenate(p)) for p in parts]
