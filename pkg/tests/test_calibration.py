"""Toy-harness tests: stratified draws, toy determinism, empirical and
asymptotic p-values, Z-scores, the average-p combination, and reports."""

import numpy as np
import pytest
from scipy.special import ndtr

from noveltyscan import (LabeledDataset, NplmConfig, ToyEnsemble,
                         asymptotic_pvalue, combine_pvalues,
                         empirical_pvalue, fit_chi2_dof, make_report,
                         run_null_toys, run_signal_toys, z_score)
from noveltyscan.calibration import (empirical_pvalue_saturated, fit_chi2,
                                     load_ensemble, save_ensemble,
                                     stratified_draw)
from noveltyscan.errors import FitFailureError


def make_pool(n=900, classes=3, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    return LabeledDataset(rng.normal(size=(n, dim)) + labels[:, None],
                          labels)


SIZES = {"n_ref": 300, "n_data": 120}
CFG = NplmConfig(widths=[1.5, 3.0], n_centers=12)


class TestStratifiedDraw:
    def test_disjoint_and_sized(self):
        pool = make_pool()
        rng = np.random.default_rng(1)
        ref, data = stratified_draw(pool.labels, 300, 120, rng)
        assert len(ref) == 300 and len(data) == 120
        assert not set(ref) & set(data)

    def test_class_proportions_match_pool(self):
        pool = make_pool(n=900, classes=3)
        rng = np.random.default_rng(2)
        ref, data = stratified_draw(pool.labels, 300, 120, rng)
        assert np.bincount(pool.labels[ref]).tolist() == [100, 100, 100]
        assert np.bincount(pool.labels[data]).tolist() == [40, 40, 40]

    def test_pool_too_small(self):
        with pytest.raises(ValueError):
            stratified_draw(np.zeros(10, dtype=int), 8, 5,
                            np.random.default_rng(0))


class TestRunNullToys:
    def test_ensemble_sizes_and_widths(self):
        ens = run_null_toys(make_pool(), SIZES, 4, CFG, master_seed=7)
        assert set(ens) == {1.5, 3.0}
        for e in ens.values():
            assert e.n_toys == 4
            assert np.all(np.isfinite(e.t_values))

    def test_single_toy(self):
        ens = run_null_toys(make_pool(), SIZES, 1, CFG, master_seed=7)
        assert ens[1.5].n_toys == 1

    def test_same_seed_identical(self):
        a = run_null_toys(make_pool(), SIZES, 3, CFG, master_seed=5)
        b = run_null_toys(make_pool(), SIZES, 3, CFG, master_seed=5)
        for w in CFG.widths:
            assert np.array_equal(a[w].t_values, b[w].t_values)

    def test_worker_count_irrelevant(self):
        a = run_null_toys(make_pool(), SIZES, 6, CFG, master_seed=9,
                          n_workers=1)
        b = run_null_toys(make_pool(), SIZES, 6, CFG, master_seed=9,
                          n_workers=3)
        for w in CFG.widths:
            assert np.array_equal(a[w].t_values, b[w].t_values)

    def test_pool_too_small(self):
        with pytest.raises(ValueError):
            run_null_toys(make_pool(n=90), SIZES, 2, CFG, master_seed=0)

    def test_fixed_reference_small_pool_ok(self):
        # with a held reference only n_data points are drawn per toy
        pool = make_pool(n=150)
        fixed = make_pool(n=300, seed=4).points
        ens = run_null_toys(pool, SIZES, 2, CFG, master_seed=1,
                            fixed_reference=fixed)
        assert ens[1.5].n_toys == 2


class TestRunSignalToys:
    def test_zero_injection_matches_null(self):
        pool = make_pool()
        sig = make_pool(n=100, seed=3)
        null = run_null_toys(pool, SIZES, 3, CFG, master_seed=11)
        inj = run_signal_toys(pool, sig, 0.0, SIZES, 3, CFG,
                              master_seed=11)
        for w in CFG.widths:
            assert np.array_equal(np.sort(inj[w]), null[w].t_values)

    def test_injection_changes_sample_size(self):
        pool = make_pool()
        sig = LabeledDataset(
            np.random.default_rng(8).normal(5.0, 0.2, size=(50, 2)),
            np.zeros(50, dtype=int))
        out = run_signal_toys(pool, sig, 0.1, SIZES, 2, CFG,
                              master_seed=13)
        assert all(len(v) == 2 for v in out.values())

    def test_signal_pool_too_small(self):
        sig = LabeledDataset(np.zeros((3, 2)), np.zeros(3, dtype=int))
        with pytest.raises(ValueError):
            run_signal_toys(make_pool(), sig, 0.1, SIZES, 2, CFG,
                            master_seed=0)


class TestEmpiricalPvalue:
    def test_direct_count(self):
        ens = ToyEnsemble(np.array([1.0, 2.0, 3.0, 4.0]), width=1.0)
        assert empirical_pvalue(2.5, ens) == 0.5

    def test_below_minimum(self):
        ens = ToyEnsemble(np.array([1.0, 2.0, 3.0]), width=1.0)
        assert empirical_pvalue(0.0, ens) == 1.0

    def test_saturation_at_500(self):
        ens = ToyEnsemble(np.arange(500.0), width=1.0)
        p, saturated = empirical_pvalue_saturated(1e9, ens)
        assert saturated
        assert p == 1.0 / 501.0
        assert z_score(p) == pytest.approx(2.878, abs=1e-3)

    def test_monotone_nonincreasing_in_t(self):
        ens = ToyEnsemble(np.random.default_rng(0).chisquare(5, 200),
                          width=1.0)
        grid = np.linspace(-1, 20, 60)
        ps = [empirical_pvalue(t, ens) for t in grid]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            empirical_pvalue(1.0, ToyEnsemble(np.array([]), width=1.0))


class TestChi2Fit:
    def test_dof_recovery(self):
        rng = np.random.default_rng(42)
        ens = ToyEnsemble(rng.chisquare(10, size=10_000), width=1.0)
        assert fit_chi2_dof(ens) == pytest.approx(10.0, abs=0.3)

    def test_moment_cross_check(self):
        rng = np.random.default_rng(17)
        t = rng.chisquare(6, size=5000)
        dof = fit_chi2_dof(ToyEnsemble(t, width=1.0))
        assert dof == pytest.approx(np.mean(t), rel=0.15)

    def test_ks_statistic_small_for_true_chi2(self):
        rng = np.random.default_rng(3)
        _, ks = fit_chi2(ToyEnsemble(rng.chisquare(4, 2000), width=1.0))
        assert ks < 0.05

    def test_constant_ensemble_fails(self):
        with pytest.raises(FitFailureError):
            fit_chi2_dof(ToyEnsemble(np.full(100, 2.0), width=1.0))

    def test_mostly_nonpositive_fails(self):
        t = np.concatenate([-np.ones(60), np.ones(40)])
        with pytest.raises(FitFailureError):
            fit_chi2_dof(ToyEnsemble(t, width=1.0))

    def test_too_few_toys(self):
        with pytest.raises(ValueError):
            fit_chi2_dof(ToyEnsemble(np.ones(10), width=1.0))


class TestAsymptoticPvalue:
    def test_zero_statistic(self):
        assert asymptotic_pvalue(0.0, 3.0) == 1.0

    def test_chi2_one_quantile(self):
        assert asymptotic_pvalue(3.841, 1.0) == pytest.approx(0.0500,
                                                              abs=1e-4)

    def test_chi2_two_closed_form(self):
        # chi2 with 2 dof has survival exp(-t/2)
        assert asymptotic_pvalue(2.0 * np.log(20.0), 2.0) == \
            pytest.approx(1.0 / 20.0, rel=1e-12)

    def test_bad_dof(self):
        with pytest.raises(ValueError):
            asymptotic_pvalue(1.0, 0.0)


class TestZscore:
    def test_median(self):
        assert z_score(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_saturation_value(self):
        assert z_score(1.0 / 501.0) == pytest.approx(2.878, abs=1e-3)

    def test_five_sigma(self):
        assert z_score(float(ndtr(-5.0))) == pytest.approx(5.0, abs=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_boundary_rejected(self, p):
        with pytest.raises(ValueError):
            z_score(p)


class TestCombinePvalues:
    def test_constant(self):
        assert combine_pvalues([0.1, 0.1, 0.1]) == pytest.approx(0.1)

    def test_arithmetic(self):
        assert combine_pvalues([0.02, 0.04, 0.06, 0.08, 0.10, 0.30]) == \
            pytest.approx(0.10, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            combine_pvalues([])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            combine_pvalues([0.5, 1.2])

    def test_false_positive_rate_conservative(self):
        # mean-of-p at threshold 0.05 inflates the false-positive rate
        # by at most about a factor two
        rng = np.random.default_rng(0)
        chi5 = rng.chisquare(5, size=(500, 2))
        null = [ToyEnsemble(rng.chisquare(5, 500), width=w)
                for w in (1.0, 2.0)]
        rate = np.mean([
            combine_pvalues([empirical_pvalue(t, e)
                             for t, e in zip(row, null)]) < 0.05
            for row in chi5])
        assert rate <= 0.10


class TestMakeReport:
    @staticmethod
    def report():
        rng = np.random.default_rng(6)
        ens = {w: ToyEnsemble(rng.chisquare(8, 600), width=w)
               for w in (1.0, 2.0)}
        return make_report({1.0: 9.5, 2.0: 14.0}, ens)

    def test_fields_and_consistency(self):
        rep = self.report()
        assert set(rep) == {"per_width", "p_combined", "z_combined",
                            "saturated"}
        for row in rep["per_width"]:
            if 0 < row["p_empirical"] < 1:
                assert row["z_empirical"] == pytest.approx(
                    z_score(row["p_empirical"]), abs=1e-9)
            assert row["z_asymptotic"] == pytest.approx(
                z_score(row["p_asymptotic"]), abs=1e-9)

    def test_combined_is_mean(self):
        rep = self.report()
        ps = [r["p_empirical"] for r in rep["per_width"]]
        assert rep["p_combined"] == pytest.approx(np.mean(ps), abs=1e-12)


class TestEnsembleIo:
    def test_round_trip(self, tmp_path):
        ens = ToyEnsemble(np.random.default_rng(0).chisquare(3, 50),
                          width=2.5, master_seed=77)
        path = tmp_path / "ens.json"
        save_ensemble(ens, path)
        loaded = load_ensemble(path)
        assert loaded.width == 2.5 and loaded.master_seed == 77
        assert np.array_equal(loaded.t_values, ens.t_values)
