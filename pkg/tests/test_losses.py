import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from tppo.losses import LossWeights, adversarial_losses, gaussian_kl, kl_loss, total_loss, variety_loss
from tppo.model import DiagonalGaussian


def G(mean, std):
    return DiagonalGaussian(torch.as_tensor(mean, dtype=torch.float64), torch.as_tensor(std, dtype=torch.float64))


def mc_kl(p_mean, p_std, q_mean, q_std, n, rng):
    x = p_mean + p_std * rng.standard_normal((n, len(p_mean)))
    log_p = -0.5 * (((x - p_mean) / p_std) ** 2).sum(1) - np.log(p_std).sum()
    log_q = -0.5 * (((x - q_mean) / q_std) ** 2).sum(1) - np.log(q_std).sum()
    return float(np.mean(log_p - log_q))


class TestAdversarial:
    def test_half_scores(self):
        d, g = adversarial_losses(torch.full((4,), 0.5), torch.full((4,), 0.5))
        assert d.item() == pytest.approx(2 * math.log(2), abs=1e-6)
        assert g.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_perfect_discriminator(self):
        d, _ = adversarial_losses(torch.tensor([1 - 1e-7], dtype=torch.float64),
                                  torch.tensor([1e-7], dtype=torch.float64))
        assert d.item() == pytest.approx(0.0, abs=1e-6)

    def test_fake_to_one(self):
        _, g = adversarial_losses(torch.tensor([0.5]), torch.tensor([1.0 - 1e-9], dtype=torch.float64))
        assert g.item() < 1e-6

    def test_clamped_extremes_finite(self):
        d, g = adversarial_losses(torch.tensor([0.0, 1.0]), torch.tensor([1.0, 0.0]))
        assert math.isfinite(d.item()) and math.isfinite(g.item())


class TestVariety:
    def test_min_of_errors(self):
        gt = torch.zeros(1, 1, 2, dtype=torch.float64)
        samples = [torch.tensor([[[e, 0.0]]], dtype=torch.float64) for e in (0.5, 0.2, 0.9)]
        assert variety_loss(gt, samples).item() == pytest.approx(0.2)

    def test_exact_sample(self, rng):
        gt = torch.as_tensor(rng.normal(size=(3, 8, 2)))
        samples = [gt + 1.0, gt.clone(), gt - 2.0]
        assert variety_loss(gt, samples).item() == 0.0

    def test_single_sample_is_l2(self, rng):
        gt = torch.as_tensor(rng.normal(size=(3, 8, 2)))
        s = torch.as_tensor(rng.normal(size=(3, 8, 2)))
        expected = np.mean([np.linalg.norm((s[i] - gt[i]).numpy()) for i in range(3)])
        assert variety_loss(gt, [s]).item() == pytest.approx(expected, rel=1e-12)

    def test_per_pedestrian_min(self):
        gt = torch.zeros(2, 1, 2, dtype=torch.float64)
        a = torch.tensor([[[1.0, 0.0]], [[3.0, 0.0]]], dtype=torch.float64)
        b = torch.tensor([[[2.0, 0.0]], [[0.5, 0.0]]], dtype=torch.float64)
        assert variety_loss(gt, [a, b]).item() == pytest.approx((1.0 + 0.5) / 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            variety_loss(torch.zeros(2, 8, 2), [torch.zeros(2, 7, 2)])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_adding_sample_never_increases(self, seed, m):
        rng = np.random.default_rng(seed)
        gt = torch.as_tensor(rng.normal(size=(3, 5, 2)))
        samples = [torch.as_tensor(rng.normal(size=(3, 5, 2))) for _ in range(m)]
        extra = torch.as_tensor(rng.normal(size=(3, 5, 2)))
        assert variety_loss(gt, samples + [extra]).item() <= variety_loss(gt, samples).item()


class TestKL:
    def test_identical_zero(self, rng):
        g = G(rng.normal(size=(3, 4)), rng.uniform(0.1, 2, size=(3, 4)))
        assert kl_loss([g, g], [g, g]).item() == 0.0

    def test_unit_shift(self):
        assert gaussian_kl(G([[0.0]], [[1.0]]), G([[1.0]], [[1.0]])).item() == pytest.approx(0.5)

    def test_wide_vs_standard(self):
        val = gaussian_kl(G([[0.0]], [[2.0]]), G([[0.0]], [[1.0]])).item()
        assert val == pytest.approx(math.log(0.5) + 2.0 - 0.5, abs=1e-12)
        assert val == pytest.approx(0.8069, abs=1e-4)

    def test_direction_is_observed_first(self):
        p, q = G([[0.0]], [[2.0]]), G([[0.0]], [[1.0]])
        assert kl_loss([p], [q]).item() == pytest.approx(gaussian_kl(p, q).item())
        assert kl_loss([p], [q]).item() != pytest.approx(gaussian_kl(q, p).item())

    def test_nonpositive_std(self):
        with pytest.raises(ValueError):
            kl_loss([G([[0.0]], [[0.0]])], [G([[0.0]], [[1.0]])])

    def test_nonnegative_random(self, rng):
        for _ in range(1000):
            p = G(rng.normal(size=(1, 4)), rng.uniform(0.05, 3, size=(1, 4)))
            q = G(rng.normal(size=(1, 4)), rng.uniform(0.05, 3, size=(1, 4)))
            assert kl_loss([p], [q]).item() >= 0.0

    def test_sums_kinds_averages_pedestrians(self, rng):
        ps = [G(rng.normal(size=(3, 4)), rng.uniform(0.2, 2, size=(3, 4))) for _ in range(3)]
        qs = [G(rng.normal(size=(3, 4)), rng.uniform(0.2, 2, size=(3, 4))) for _ in range(3)]
        manual = 0.0
        for i in range(3):
            for p, q in zip(ps, qs):
                for d in range(4):
                    sp, sq = p.std[i, d].item(), q.std[i, d].item()
                    mp, mq = p.mean[i, d].item(), q.mean[i, d].item()
                    manual += math.log(sq / sp) + (sp ** 2 + (mp - mq) ** 2) / (2 * sq ** 2) - 0.5
        assert kl_loss(ps, qs).item() == pytest.approx(manual / 3, rel=1e-12)

    def test_monte_carlo(self, rng):
        for _ in range(5):
            pm, qm = rng.normal(size=4), rng.normal(size=4)
            ps, qs = rng.uniform(0.5, 1.5, size=4), rng.uniform(0.5, 1.5, size=4)
            exact = kl_loss([G(pm[None], ps[None])], [G(qm[None], qs[None])]).item()
            est = mc_kl(pm, ps, qm, qs, 100_000, rng)
            assert abs(est - exact) <= 0.02 * exact


class TestTotal:
    def test_default_weights(self):
        assert total_loss(0.69, 0.2, 0.01, LossWeights(1, 10)) == pytest.approx(0.99)

    def test_beta_zero(self):
        assert total_loss(0.7, 0.3, 5.0, LossWeights(1, 0)) == pytest.approx(1.0)

    def test_zeros(self):
        assert total_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1)
        with pytest.raises(ValueError):
            LossWeights(variety_m=0)


class TestGradients:
    def test_variety(self, rng):
        gt = torch.as_tensor(rng.normal(size=(3, 4, 2)))
        s0 = torch.as_tensor(rng.normal(size=(5, 3, 4, 2)))
        s = s0.clone().requires_grad_(True)
        variety_loss(gt, s).backward()
        assert rel_err(s.grad, central_diff(lambda x: variety_loss(gt, x), s0)) < 1e-4

    def test_kl(self, rng):
        vals = [torch.as_tensor(rng.normal(size=(2, 4))) for _ in range(4)]

        def f(pm, plv, qm, qlv):
            return kl_loss([DiagonalGaussian.from_logvar(pm, plv)], [DiagonalGaussian.from_logvar(qm, qlv)])

        leaves = [v.clone().requires_grad_(True) for v in vals]
        f(*leaves).backward()
        for k in range(4):
            def fk(x, k=k):
                args = list(vals)
                args[k] = x
                return f(*args)
            assert rel_err(leaves[k].grad, central_diff(fk, vals[k])) < 1e-4

    def test_adversarial(self, rng):
        real0 = torch.as_tensor(rng.uniform(0.05, 0.95, size=6))
        fake0 = torch.as_tensor(rng.uniform(0.05, 0.95, size=6))
        for which in (0, 1):
            real, fake = real0.clone().requires_grad_(True), fake0.clone().requires_grad_(True)
            adversarial_losses(real, fake)[which].backward()
            fd_real = central_diff(lambda x: adversarial_losses(x, fake0)[which], real0)
            fd_fake = central_diff(lambda x: adversarial_losses(real0, x)[which], fake0)
            if which == 0:
                assert rel_err(real.grad, fd_real) < 1e-4
            assert rel_err(fake.grad, fd_fake) < 1e-4

    def test_total(self, rng):
        w = LossWeights(1.0, 10.0)
        fake0 = torch.as_tensor(rng.uniform(0.1, 0.9, size=4))
        gt = torch.as_tensor(rng.normal(size=(2, 3, 2)))
        s0 = torch.as_tensor(rng.normal(size=(3, 2, 3, 2)))
        m0 = torch.as_tensor(rng.normal(size=(2, 4)))

        def f(fake, s, m):
            from tppo.losses import generator_adversarial_loss
            kl = kl_loss([G(m, torch.ones(2, 4))], [G(torch.zeros(2, 4), torch.full((2, 4), 0.7))])
            return total_loss(generator_adversarial_loss(fake), variety_loss(gt, s), kl, w)

        fake, s, m = (t.clone().requires_grad_(True) for t in (fake0, s0, m0))
        f(fake, s, m).backward()
        assert rel_err(fake.grad, central_diff(lambda x: f(x, s0, m0), fake0)) < 1e-4
        assert rel_err(s.grad, central_diff(lambda x: f(fake0, x, m0), s0)) < 1e-4
        assert rel_err(m.grad, central_diff(lambda x: f(fake0, s0, x), m0)) < 1e-4
