"""Loss tests: independent double-loop oracles for both contrastive
losses, finite-difference gradient checks, and the stated invariants."""

import numpy as np
import pytest

from noveltyscan import ce_loss, combined_loss, simclr_loss, supcon_loss
from noveltyscan.errors import DegenerateBatchError


def supcon_oracle(z, labels, tau):
    """Straightforward double-loop evaluation of the supervised
    contrastive loss with cosine similarity."""
    z = np.asarray(z, dtype=float)
    zh = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = len(z)
    total = 0.0
    for i in range(n):
        positives = [j for j in range(n)
                     if j != i and labels[j] == labels[i]]
        if not positives:
            continue
        denom = sum(np.exp(zh[i] @ zh[k] / tau)
                    for k in range(n) if k != i)
        for p in positives:
            total += (-1.0 / len(positives)) * np.log(
                np.exp(zh[i] @ zh[p] / tau) / denom)
    return total


def simclr_oracle(z, tau):
    """Double-loop paired-view loss; anchors are even rows, partners the
    following odd rows."""
    z = np.asarray(z, dtype=float)
    zh = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = len(z)
    total = 0.0
    for a in range(0, n, 2):
        denom = sum(np.exp(zh[a] @ zh[k] / tau)
                    for k in range(n) if k != a)
        total += -np.log(np.exp(zh[a] @ zh[a + 1] / tau) / denom)
    return total


def fd_grad(fn, z, eps=1e-5):
    g = np.zeros_like(z)
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += eps
            zm[i, j] -= eps
            g[i, j] = (fn(zp) - fn(zm)) / (2 * eps)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


class TestSupcon:
    def test_two_identical_same_label_zero_loss(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        loss, _ = supcon_loss(z, [0, 0], 1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_matches_double_loop_oracle_fixed_batch(self):
        z = np.array([[1.0, 0.2, -0.3, 0.5],
                      [0.9, 0.1, -0.2, 0.4],
                      [-1.0, 0.5, 0.3, -0.2],
                      [-0.8, 0.6, 0.2, -0.1]])
        labels = [0, 0, 1, 1]
        loss, _ = supcon_loss(z, labels, 0.5)
        assert loss == pytest.approx(supcon_oracle(z, labels, 0.5),
                                     abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_oracle_random(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(9, 4))
        labels = rng.integers(0, 3, size=9)
        if np.all(np.bincount(labels, minlength=3) <= 1):
            labels[1] = labels[0]
        loss, _ = supcon_loss(z, labels, 0.2)
        assert loss == pytest.approx(supcon_oracle(z, labels, 0.2),
                                     abs=1e-10)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        z = rng.normal(size=(8, 4))
        labels = rng.integers(0, 3, size=8)
        if np.all(np.bincount(labels, minlength=3) <= 1):
            labels[1] = labels[0]
        _, grad = supcon_loss(z, labels, 0.1)
        num = fd_grad(lambda q: supcon_loss(q, labels, 0.1)[0], z)
        assert rel_err(grad, num) < 1e-4

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(10, 4))
        labels = rng.integers(0, 2, size=10)
        base, _ = supcon_loss(z, labels, 0.3)
        scaled, _ = supcon_loss(17.3 * z, labels, 0.3)
        assert scaled == pytest.approx(base, abs=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(12, 3))
        labels = rng.integers(0, 3, size=12)
        perm = rng.permutation(12)
        loss_a, grad_a = supcon_loss(z, labels, 0.4)
        loss_b, grad_b = supcon_loss(z[perm], labels[perm], 0.4)
        assert loss_b == pytest.approx(loss_a, abs=1e-12)
        assert np.allclose(grad_b, grad_a[perm], atol=1e-12)

    def test_empty_positive_anchor_skipped(self):
        # class 2 has a single member; its anchor contributes nothing
        z = np.random.default_rng(1).normal(size=(5, 3))
        labels = np.array([0, 0, 1, 1, 2])
        loss, _ = supcon_loss(z, labels, 0.5)
        assert loss == pytest.approx(supcon_oracle(z, labels, 0.5),
                                     abs=1e-10)

    def test_all_distinct_labels_raises(self):
        z = np.random.default_rng(2).normal(size=(4, 3))
        with pytest.raises(DegenerateBatchError):
            supcon_loss(z, [0, 1, 2, 3], 0.5)


class TestSimclr:
    def test_identical_pairs_log3(self):
        z = np.tile([0.3, 0.4], (4, 1))
        loss, _ = simclr_loss(z, 0.7)
        assert loss == pytest.approx(2.0 * np.log(3.0), abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_oracle_random(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(8, 4))
        loss, _ = simclr_loss(z, 0.3)
        assert loss == pytest.approx(simclr_oracle(z, 0.3), abs=1e-10)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_finite_differences(self, seed):
        rng = np.random.default_rng(50 + seed)
        z = rng.normal(size=(8, 4))
        _, grad = simclr_loss(z, 0.2)
        num = fd_grad(lambda q: simclr_loss(q, 0.2)[0], z)
        assert rel_err(grad, num) < 1e-4

    def test_odd_rows_rejected(self):
        with pytest.raises(ValueError):
            simclr_loss(np.ones((5, 2)), 0.5)


class TestCe:
    def test_uniform_logits(self):
        loss, _ = ce_loss(np.zeros((6, 4)), np.arange(6) % 4)
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_saturated_correct_logit(self):
        logits = np.full((3, 3), -50.0)
        logits[np.arange(3), [0, 1, 2]] = 50.0
        loss, _ = ce_loss(logits, [0, 1, 2])
        assert loss < 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_finite_differences(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.normal(size=(7, 5))
        y = rng.integers(0, 5, size=7)
        _, grad = ce_loss(x, y)
        num = fd_grad(lambda q: ce_loss(q, y)[0], x)
        assert rel_err(grad, num) < 1e-6

    def test_out_of_range_labels(self):
        with pytest.raises(ValueError):
            ce_loss(np.zeros((2, 3)), [0, 3])


class TestCombined:
    def test_lambda_zero_equals_supcon(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=(8, 4))
        logits = rng.normal(size=(8, 3))
        y = rng.integers(0, 3, size=8)
        loss, l_sup, l_ce, g_proj, g_logit = combined_loss(
            z, logits, y, 0.3, 0.0)
        ref_loss, ref_grad = supcon_loss(z, y, 0.3)
        assert loss == ref_loss and l_ce == 0.0
        assert np.array_equal(g_proj, ref_grad)
        assert np.all(g_logit == 0.0)

    def test_linearity_at_half(self):
        rng = np.random.default_rng(10)
        z = rng.normal(size=(8, 4))
        logits = rng.normal(size=(8, 3))
        y = rng.integers(0, 3, size=8)
        loss, l_sup, l_ce, _, _ = combined_loss(z, logits, y, 0.3, 0.5)
        assert loss == pytest.approx(l_sup + 0.5 * l_ce, abs=1e-12)
        assert l_sup == pytest.approx(supcon_loss(z, y, 0.3)[0])
        assert l_ce == pytest.approx(ce_loss(logits, y)[0])

    @pytest.mark.parametrize("lam", [0.1, 0.5])
    def test_paper_lambda_range_accepted(self, lam):
        rng = np.random.default_rng(11)
        z = rng.normal(size=(6, 4))
        logits = rng.normal(size=(6, 2))
        y = rng.integers(0, 2, size=6)
        loss, *_ = combined_loss(z, logits, y, 0.2, lam)
        assert np.isfinite(loss)
