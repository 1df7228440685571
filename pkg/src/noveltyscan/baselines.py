"""Comparison tests: Mahalanobis, supervised binned fit, Nystrom MMD,
Frechet distance. All are calibrated through the same toy resampling
scheme as the kernel test.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.optimize import minimize

from ._util import derived_rng
from .calibration import (ToyEnsemble, combine_pvalues,
                          empirical_pvalue_saturated, stratified_draw,
                          z_score)
from .encoder import _mlp_backward, _mlp_forward, _he_uniform_layers
from .errors import DegenerateDataError, FitFailureError
from .nplm import (build_centers, default_n_centers, kernel_matrix,
                   standardize_by_reference)

RIDGE_SAMPLE_FACTOR = 5   # ridge kicks in below this many samples per dim


@dataclass
class ClassMoments:
    """Per-class mean and (regularized) covariance of the reference."""

    means: list          # one (d,) vector per class
    covariances: list    # one (d, d) matrix per class
    ridged: bool = False

    @classmethod
    def from_reference(cls, points, labels, ridge_scale=1e-6):
        means, covs = [], []
        ridged = False
        d = points.shape[1]
        for c in np.unique(labels):
            x = points[labels == c]
            mu = x.mean(axis=0)
            cov = np.cov(x, rowvar=False, bias=False)
            cov = np.atleast_2d(cov)
            if x.shape[0] < RIDGE_SAMPLE_FACTOR * d:
                cov = cov + np.eye(d) * (ridge_scale * np.trace(cov) / d)
                ridged = True
            means.append(mu)
            covs.append(cov)
        return cls(means, covs, ridged)


def mahalanobis_statistic(moments, observed):
    """Sum over points of the class-minimum squared Mahalanobis
    distance, solved via Cholesky factors."""
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    dists = np.full((observed.shape[0], len(moments.means)), np.inf)
    for k, (mu, cov) in enumerate(zip(moments.means, moments.covariances)):
        try:
            factor = cho_factor(cov)
        except np.linalg.LinAlgError as exc:
            raise FitFailureError(
                f"singular covariance for class {k}") from exc
        diff = observed - mu
        dists[:, k] = np.sum(diff * cho_solve(factor, diff.T).T, axis=1)
    return float(dists.min(axis=1).sum())


class ScoreClassifier:
    """Tiny MLP signal/background scorer with logistic output."""

    def __init__(self, layers):
        self.layers = layers

    def __call__(self, points):
        f, _ = _mlp_forward(self.layers, np.atleast_2d(points))
        return 1.0 / (1.0 + np.exp(-f[:, 0]))


def train_score_classifier(train_background, train_signal, seed,
                           hidden=32, epochs=40, batch_size=256,
                           learning_rate=0.01, momentum=0.9):
    """Train the supervised score s(x) in the embedding space.

    Binary cross-entropy on signal=1 vs background=0; deterministic
    given the seed.
    """
    if len(train_background) == 0 or len(train_signal) == 0:
        raise ValueError("both classes must be non-empty")
    x = np.vstack([train_background.points, train_signal.points])
    y = np.concatenate([np.zeros(len(train_background)),
                        np.ones(len(train_signal))])
    rng = np.random.default_rng(seed)
    layers = _he_uniform_layers([x.shape[1], hidden, hidden, 1], rng)
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    n = len(y)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            f, acts = _mlp_forward(layers, x[idx])
            p = 1.0 / (1.0 + np.exp(-f[:, 0]))
            g_out = ((p - y[idx]) / idx.size)[:, None]
            _, grads = _mlp_backward(layers, acts, g_out)
            for k, ((w, b), (gw, gb)) in enumerate(zip(layers, grads)):
                vw, vb = velocity[k]
                vw = momentum * vw - learning_rate * gw
                vb = momentum * vb - learning_rate * gb
                velocity[k] = (vw, vb)
                layers[k] = (w + vw, b + vb)
    return ScoreClassifier(layers)


@dataclass
class ScoreTemplates:
    """Normalized per-bin probabilities for background and signal."""

    bin_edges: np.ndarray
    f_background: np.ndarray
    f_signal: np.ndarray


def build_templates(scores_ref, scores_sig, n_bins=20, floor=1e-6):
    """Uniform-bin score templates on [0, 1].

    Empty background bins get a probability floor before renormalizing,
    keeping the null fit finite everywhere.
    """
    scores_ref = np.asarray(scores_ref, dtype=float)
    scores_sig = np.asarray(scores_sig, dtype=float)
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    if scores_ref.size == 0:
        raise ValueError("no reference scores")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    f_r, _ = np.histogram(np.clip(scores_ref, 0, 1), bins=edges)
    f_s, _ = np.histogram(np.clip(scores_sig, 0, 1), bins=edges)
    f_r = f_r / f_r.sum()
    f_r = np.maximum(f_r, floor)
    f_r = f_r / f_r.sum()
    if f_s.sum() > 0:
        f_s = f_s / f_s.sum()
    else:
        f_s = np.full(n_bins, 1.0 / n_bins)
    return ScoreTemplates(edges, f_r, f_s)


def binned_delta_chi2(observed_scores, templates):
    """Two-template Poisson likelihood-ratio statistic.

    Null fit floats one background amplitude; the alternative adds a
    non-negative signal amplitude. Returns 2*(logL_H1 - logL_H0) >= 0.
    """
    counts, _ = np.histogram(np.clip(observed_scores, 0, 1),
                             bins=templates.bin_edges)
    counts = counts.astype(float)
    n_tot = counts.sum()
    f_r, f_s = templates.f_background, templates.f_signal

    def negll(amps):
        mu = amps[0] * f_r + amps[1] * f_s
        mu = np.maximum(mu, 1e-300)
        return float(np.sum(mu) - np.sum(counts * np.log(mu)))

    # H0: closed form, a1 = total count (templates are normalized)
    ll_h0 = -negll([n_tot, 0.0])
    res = minimize(negll, x0=[max(n_tot, 1.0), 1e-3],
                   bounds=[(1e-9, None), (0.0, None)], method="L-BFGS-B")
    if not np.isfinite(res.fun):
        raise FitFailureError(f"signal-plus-background fit failed: "
                              f"counts={counts.tolist()}")
    ll_h1 = -min(res.fun, negll([n_tot, 0.0]))
    delta = 2.0 * (ll_h1 - ll_h0)
    if delta < -1e-9:
        raise FitFailureError(f"negative delta chi2 {delta}")
    return max(delta, 0.0)


def nystrom_mmd(reference, observed, width, centers, eig_floor=1e-10):
    """Squared MMD between Nystrom feature-map means.

    Feature map: K_c^{-1/2} k(x, centers), with the inverse square root
    from an eigendecomposition, dropping modes below eig_floor.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    k_c = kernel_matrix(centers, centers, width)
    vals, vecs = eigh(k_c)
    keep = vals > eig_floor
    if not np.any(keep):
        raise DegenerateDataError("center kernel matrix is numerically "
                                  "rank zero")
    proj = vecs[:, keep] / np.sqrt(vals[keep])
    phi_ref = kernel_matrix(reference, centers, width) @ proj
    phi_obs = kernel_matrix(observed, centers, width) @ proj
    diff = phi_ref.mean(axis=0) - phi_obs.mean(axis=0)
    return float(diff @ diff)


def frechet_distance(mu1, s1, mu2, s2):
    """Closed-form Gaussian Frechet distance (squared)."""
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    for s in (s1, s2):
        if np.max(np.abs(s - s.T)) > 1e-9:
            raise ValueError("covariance matrices must be symmetric")
    vals1, vecs1 = eigh(s1)
    root1 = (vecs1 * np.sqrt(np.maximum(vals1, 0.0))) @ vecs1.T
    inner = root1 @ s2 @ root1
    inner = 0.5 * (inner + inner.T)
    cross = np.sum(np.sqrt(np.maximum(eigh(inner, eigvals_only=True), 0.0)))
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * cross)


def _gaussian_fit(points):
    return points.mean(axis=0), np.atleast_2d(np.cov(points, rowvar=False))


def _toy_statistics(kind, ref_points, ref_labels, obs_points, rng,
                    nplm_config):
    """Per-channel statistics for one toy; channels are kernel widths
    for mmd and a single channel otherwise."""
    if kind == "mahalanobis":
        moments = ClassMoments.from_reference(ref_points, ref_labels)
        return [mahalanobis_statistic(moments, obs_points)]
    if kind == "frechet":
        mu_r, s_r = _gaussian_fit(ref_points)
        mu_o, s_o = _gaussian_fit(obs_points)
        return [frechet_distance(mu_r, s_r, mu_o, s_o)]
    if kind == "mmd":
        ref, obs = standardize_by_reference(ref_points, obs_points)
        m = nplm_config.n_centers or default_n_centers(len(ref), len(obs))
        centers = build_centers(np.vstack([ref, obs]), m,
                                int(rng.integers(2**63)))
        return [nystrom_mmd(ref, obs, w, centers)
                for w in nplm_config.widths]
    raise ValueError(f"unknown statistic kind {kind!r}")


@dataclass
class ScanResult:
    kind: str
    f_s_grid: list
    null_t: np.ndarray        # (n_null_toys, n_channels)
    signal_t: dict            # f_s -> (n_toys, n_channels)
    z_median: dict            # f_s -> float
    z_band: dict              # f_s -> (16th, 84th)
    per_toy_z: dict           # f_s -> (n_toys,) combined-empirical Z


def baseline_toy_scan(kind, background_pool, signal_pool, f_s_grid, sizes,
                      n_toys, master_seed, nplm_config=None,
                      score_fn=None, signal_template_scores=None,
                      n_bins=20, n_null_toys=None):
    """Empirical-Z scan of one baseline statistic over signal fractions.

    The toy resampling and seed derivation mirror the kernel-test
    harness exactly; null toys (f_s = 0) calibrate the statistic, and
    per-toy combined p-values (average over channels) give empirical
    Z-scores summarized by their median and 16th/84th percentiles.

    kind "supervised" and "ideal_supervised" need score_fn (trained on
    the matching embedding) plus signal_template_scores for the signal
    shape template; the embedded pools passed in must match the
    embedding the score function was trained on.
    """
    n_ref, n_data = sizes["n_ref"], sizes["n_data"]
    n_null = n_null_toys if n_null_toys is not None else n_toys
    supervised = kind in ("supervised", "ideal_supervised")
    if supervised and (score_fn is None or signal_template_scores is None):
        raise ValueError(f"{kind} requires score_fn and "
                         "signal_template_scores")

    def one_toy(f_s, toy_index, stream):
        rng = derived_rng(master_seed, stream, toy_index)
        ref_idx, data_idx = stratified_draw(background_pool.labels,
                                            n_ref, n_data, rng)
        obs = background_pool.points[data_idx]
        n_sig = int(round(f_s * n_data))
        if n_sig > 0:
            pick = rng.choice(len(signal_pool), size=n_sig, replace=False)
            obs = np.vstack([obs, signal_pool.points[pick]])
        ref = background_pool.points[ref_idx]
        if supervised:
            scores_ref = score_fn(ref)
            templates = build_templates(scores_ref,
                                        signal_template_scores, n_bins)
            return [binned_delta_chi2(score_fn(obs), templates)]
        return _toy_statistics(kind, ref, background_pool.labels[ref_idx],
                               obs, rng, nplm_config)

    null_t = np.asarray([one_toy(0.0, i, 0) for i in range(n_null)])
    n_channels = null_t.shape[1]
    null_ens = [ToyEnsemble(null_t[:, c], width=float(c))
                for c in range(n_channels)]

    signal_t, z_median, z_band, per_toy_z = {}, {}, {}, {}
    for f_s in f_s_grid:
        rows = np.asarray([one_toy(f_s, i, 1 + round(f_s * 1e6))
                           for i in range(n_toys)])
        zs = np.empty(len(rows))
        for i, row in enumerate(rows):
            ps = [empirical_pvalue_saturated(row[c], null_ens[c])[0]
                  for c in range(n_channels)]
            zs[i] = z_score(min(max(combine_pvalues(ps), 1e-12), 1 - 1e-12))
        signal_t[f_s] = rows
        z_median[f_s] = float(np.median(zs))
        z_band[f_s] = (float(np.percentile(zs, 16)),
                       float(np.percentile(zs, 84)))
        per_toy_z[f_s] = zs
    return ScanResult(kind, list(f_s_grid), null_t, signal_t, z_median,
                      z_band, per_toy_z)
