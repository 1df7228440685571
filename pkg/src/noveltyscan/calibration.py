"""Pseudo-experiment harness and p-value machinery.

Null and signal-injection toys are resampled from larger pools; each
toy's randomness derives only from (master_seed, toy index), so results
are reproducible and independent of worker scheduling.
"""

import json
import multiprocessing
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, gammaincc, ndtri
from scipy.stats import kstest

from ._util import derived_rng, derived_seed, single_blas_thread
from .datagen import _stratum_counts
from .errors import FitFailureError
from .nplm import run_test


@dataclass
class ToyEnsemble:
    """Sorted test statistics from null pseudo-experiments."""

    t_values: np.ndarray
    width: float
    master_seed: int = 0

    def __post_init__(self):
        self.t_values = np.sort(np.asarray(self.t_values, dtype=float))

    @property
    def n_toys(self):
        return len(self.t_values)


def stratified_draw(labels, n_ref, n_data, rng):
    """Disjoint reference/data index draws matching pool class mix."""
    n = len(labels)
    if n < n_ref + n_data:
        raise ValueError("pool too small for requested draw sizes")
    classes, counts = np.unique(labels, return_counts=True)
    props = counts / n
    ref_counts = _stratum_counts(n_ref, props)
    data_counts = _stratum_counts(n_data, props)
    ref_idx, data_idx = [], []
    for c, cnt_r, cnt_d in zip(classes, ref_counts, data_counts):
        idx = np.flatnonzero(labels == c)
        if cnt_r + cnt_d > len(idx):
            raise ValueError(f"class {c} too small for stratified draw")
        pick = rng.choice(len(idx), size=cnt_r + cnt_d, replace=False)
        ref_idx.append(idx[pick[:cnt_r]])
        data_idx.append(idx[pick[cnt_r:]])
    return np.concatenate(ref_idx), np.concatenate(data_idx)


# worker-side state for the process pool
_POOL_STATE = {}


def _init_toy_worker(state):
    _POOL_STATE.update(state)


def _one_nplm_toy(toy_index):
    with single_blas_thread():
        s = _POOL_STATE
        return nplm_toy_statistic(
            s["bkg_points"], s["bkg_labels"], s["sig_points"],
            s["f_s"], s["n_ref"], s["n_data"], s["config"],
            s["master_seed"], toy_index,
            fixed_reference=s.get("fixed_reference"))


def nplm_toy_statistic(bkg_points, bkg_labels, sig_points, f_s,
                       n_ref, n_data, config, master_seed, toy_index,
                       fixed_reference=None):
    """One pseudo-experiment: sample R and D, run the per-width tests.

    Returns the list of t values in config width order. The observed
    sample holds n_data background points plus round(f_s * n_data)
    injected signal points; the reference weight is matched to the
    background count. Pass `fixed_reference` to hold one reference
    sample across all toys instead of re-drawing R per toy.
    """
    rng = derived_rng(master_seed, toy_index)
    if fixed_reference is not None:
        _, data_idx = stratified_draw(bkg_labels, 0, n_data, rng)
        reference = fixed_reference
    else:
        ref_idx, data_idx = stratified_draw(bkg_labels, n_ref, n_data, rng)
        reference = bkg_points[ref_idx]
    n_sig = int(round(f_s * n_data))
    observed = bkg_points[data_idx]
    if n_sig > 0:
        if sig_points is None or len(sig_points) < n_sig:
            raise ValueError("signal pool too small for injection")
        sig_idx = rng.choice(len(sig_points), size=n_sig, replace=False)
        observed = np.vstack([observed, sig_points[sig_idx]])
    cfg = replace(config, w_ref=n_data / n_ref)
    results = run_test(reference, observed, cfg,
                       derived_seed(master_seed, toy_index, 1))
    return [r["t"] for r in results]


def _run_toys(bkg, sig_points, f_s, sizes, n_toys, config, master_seed,
              n_workers, fixed_reference=None):
    state = {
        "bkg_points": bkg.points, "bkg_labels": bkg.labels,
        "sig_points": sig_points, "f_s": f_s,
        "n_ref": sizes["n_ref"], "n_data": sizes["n_data"],
        "config": config, "master_seed": master_seed,
        "fixed_reference": fixed_reference,
    }
    if n_workers <= 1:
        _init_toy_worker(state)
        rows = [_one_nplm_toy(i) for i in range(n_toys)]
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(n_workers, initializer=_init_toy_worker,
                      initargs=(state,)) as pool:
            rows = pool.map(_one_nplm_toy, range(n_toys))
    return np.asarray(rows)   # (n_toys, n_widths)


def run_null_toys(background_pool, sizes, n_toys, nplm_config, master_seed,
                  n_workers=1, fixed_reference=None):
    """Null-hypothesis pseudo-experiments; dict width -> ToyEnsemble."""
    need = sizes["n_data"] if fixed_reference is not None \
        else sizes["n_ref"] + sizes["n_data"]
    if len(background_pool) < need:
        raise ValueError("background pool too small")
    rows = _run_toys(background_pool, None, 0.0, sizes, n_toys,
                     nplm_config, master_seed, n_workers, fixed_reference)
    return {w: ToyEnsemble(rows[:, k], width=w, master_seed=master_seed)
            for k, w in enumerate(nplm_config.widths)}


def run_signal_toys(background_pool, signal_pool, f_s, sizes, n_toys,
                    nplm_config, master_seed, n_workers=1,
                    fixed_reference=None):
    """Signal-injection pseudo-experiments; dict width -> t array."""
    n_sig = int(round(f_s * sizes["n_data"]))
    if n_sig > 0 and len(signal_pool) < n_sig:
        raise ValueError("signal pool too small for injection")
    sig_points = signal_pool.points if n_sig > 0 else None
    rows = _run_toys(background_pool, sig_points, f_s, sizes, n_toys,
                     nplm_config, master_seed, n_workers, fixed_reference)
    return {w: rows[:, k] for k, w in enumerate(nplm_config.widths)}


def empirical_pvalue(t_obs, ensemble):
    """Fraction of null toys exceeding t_obs; see also the saturated
    variant used in reports."""
    p, _ = empirical_pvalue_saturated(t_obs, ensemble)
    return p


def empirical_pvalue_saturated(t_obs, ensemble):
    """(p, saturated): a zero exceedance count is reported as
    1/(n_toys + 1) with the saturation flag set."""
    t = ensemble.t_values
    if len(t) == 0:
        raise ValueError("ensemble is empty")
    count = int(np.sum(t > t_obs))
    if count == 0:
        return 1.0 / (len(t) + 1), True
    return count / len(t), False


def fit_chi2(ensemble):
    """MLE chi-square dof fit over positive entries.

    Returns (dof, ks_statistic). Solves digamma(k/2) = mean(log t) -
    log 2 by bisection; raises FitFailureError when the ensemble is not
    chi-square-like.
    """
    t = np.asarray(ensemble.t_values if isinstance(ensemble, ToyEnsemble)
                   else ensemble, dtype=float)
    if len(t) < 50:
        raise ValueError("need at least 50 toys for the asymptotic fit")
    pos = t[t > 0]
    if len(pos) < 0.5 * len(t):
        raise FitFailureError(
            "half or more of the statistics are non-positive")
    if np.std(pos) == 0:
        raise FitFailureError("degenerate (constant) ensemble")
    target = float(np.mean(np.log(pos)) - np.log(2.0))

    def g(k):
        return digamma(k / 2.0) - target

    lo, hi = 1e-8, 1e8
    if g(lo) > 0 or g(hi) < 0:
        raise FitFailureError("dof equation has no root in range")
    dof = brentq(g, lo, hi, xtol=1e-12, rtol=1e-12)
    ks = kstest(pos, lambda x: 1.0 - gammaincc(dof / 2.0, x / 2.0)).statistic
    return float(dof), float(ks)


def fit_chi2_dof(ensemble):
    """Chi-square degrees of freedom by maximum likelihood."""
    dof, _ = fit_chi2(ensemble)
    return dof


def asymptotic_pvalue(t_obs, dof):
    """Upper chi-square tail probability via the regularized upper
    incomplete gamma function."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    if t_obs <= 0:
        return 1.0
    return float(gammaincc(dof / 2.0, t_obs / 2.0))


def z_score(p):
    """One-sided Gaussian-equivalent significance of a p-value."""
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")
    return float(-ndtri(p))


def combine_pvalues(per_width_p):
    """Average-p combination across kernel widths."""
    p = np.asarray(per_width_p, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one p-value")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    return float(p.mean())


def make_report(t_obs_per_width, ensembles):
    """Per-width p/Z summary plus the average-p combination.

    t_obs_per_width: dict width -> observed t. ensembles: dict width ->
    null ToyEnsemble. Returns a plain dict (JSON-ready).
    """
    per_width = []
    any_saturated = False
    for width, t_obs in t_obs_per_width.items():
        ens = ensembles[width]
        p_emp, saturated = empirical_pvalue_saturated(t_obs, ens)
        any_saturated = any_saturated or saturated
        dof, ks = fit_chi2(ens)
        p_asym = asymptotic_pvalue(t_obs, dof)
        per_width.append({
            "width": float(width),
            "t_obs": float(t_obs),
            "p_empirical": p_emp,
            "p_asymptotic": p_asym,
            "z_empirical": z_score(p_emp) if p_emp < 1.0 else -np.inf,
            "z_asymptotic": z_score(min(max(p_asym, 1e-300), 1 - 1e-16)),
            "chi2_dof": dof,
            "chi2_ks": ks,
            "saturated": saturated,
        })
    p_combined = combine_pvalues([r["p_empirical"] for r in per_width])
    return {
        "per_width": per_width,
        "p_combined": p_combined,
        "z_combined": z_score(p_combined) if 0 < p_combined < 1 else -np.inf,
        "saturated": any_saturated,
    }


def save_ensemble(ensemble, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"width": ensemble.width,
                   "master_seed": ensemble.master_seed,
                   "n_toys": ensemble.n_toys,
                   "t_values": ensemble.t_values.tolist()}, fh)


def load_ensemble(path):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return ToyEnsemble(np.asarray(obj["t_values"]), width=obj["width"],
                       master_seed=obj["master_seed"])
