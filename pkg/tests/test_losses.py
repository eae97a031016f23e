import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adv_oracle, fm_oracle, kl_oracle, recon_oracle
from pseudovc.config import LossWeights
from pseudovc.losses import assemble, loss_adv, loss_fm, loss_kl, loss_recon

f64 = torch.float64


def _t(rng, *shape, scale=1.0):
    return torch.from_numpy(rng.standard_normal(shape) * scale)


class TestRecon:
    def test_identical(self):
        x = torch.randn(3, 4)
        assert loss_recon(x, x).item() == 0.0

    def test_constant_offset(self):
        x = torch.randn(3, 4, dtype=f64)
        assert loss_recon(x, x + 0.5).item() == pytest.approx(0.5, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_recon(torch.zeros(3, 4), torch.zeros(4, 3))

    def test_mask_ignores_padding(self):
        a, b = torch.zeros(1, 2, 4), torch.zeros(1, 2, 4)
        b[..., 2:] = 100.0
        mask = torch.tensor([[[1.0, 1.0, 0.0, 0.0]]])
        assert loss_recon(a, b, mask).item() == 0.0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a, b = _t(rng, 3, 4), _t(rng, 3, 4)
        assert loss_recon(a, b).item() == pytest.approx(recon_oracle(a, b), rel=1e-9)


class TestKL:
    def test_zero_for_q_equal_p(self):
        rng = np.random.default_rng(0)
        mu, ls, z = _t(rng, 2, 3, 4), _t(rng, 2, 3, 4, scale=0.3), _t(rng, 2, 3, 4)
        assert loss_kl((mu, ls), z, z, torch.zeros(2, dtype=f64), (mu, ls)).item() == 0.0

    def test_shifted_prior_closed_form(self):
        delta = 0.7
        mu = torch.zeros(1, 3, 5, dtype=f64)
        zero = torch.zeros_like(mu)
        kl = loss_kl((mu, zero), mu, mu, torch.zeros(1, dtype=f64), (mu + delta, zero))
        assert kl.item() == pytest.approx(delta**2 / 2, rel=1e-12)

    def test_duplicated_frames_invariant(self):
        rng = np.random.default_rng(1)
        args = [_t(rng, 1, 2, 3) for _ in range(6)]
        q, z, z_p, p = (args[0], args[1]), args[2], args[3], (args[4], args[5])
        one = loss_kl(q, z, z_p, torch.zeros(1, dtype=f64), p)
        dup = lambda t: torch.cat([t, t], dim=-1)  # noqa: E731
        two = loss_kl((dup(q[0]), dup(q[1])), dup(z), dup(z_p), torch.zeros(1, dtype=f64), (dup(p[0]), dup(p[1])))
        assert two.item() == pytest.approx(one.item(), rel=1e-12)

    def test_nonfinite_rejected(self):
        x = torch.zeros(1, 2, 2)
        bad = x.clone()
        bad[0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            loss_kl((x, x), bad, x, torch.zeros(1), (x, x))

    def test_nonnegative_in_expectation(self):
        g = torch.Generator().manual_seed(0)
        q_mu, q_ls = torch.tensor([[0.3], [-0.2]], dtype=f64), torch.tensor([[-0.4], [0.1]], dtype=f64)
        p_mu, p_ls = torch.tensor([[0.0], [0.5]], dtype=f64), torch.tensor([[0.2], [-0.3]], dtype=f64)
        vals = []
        for _ in range(10_000):
            z = q_mu + torch.exp(q_ls) * torch.randn(q_mu.shape, generator=g, dtype=f64)
            vals.append(loss_kl((q_mu, q_ls), z, z, torch.zeros(1, dtype=f64), (p_mu, p_ls)).item())
        vals = np.asarray(vals)
        assert vals.mean() >= -3 * vals.std(ddof=1) / math.sqrt(len(vals))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_oracle(self, seed):
        rng = np.random.default_rng(seed)
        q_mu, q_ls, z, z_p, p_mu, p_ls = (_t(rng, 3, 4, scale=0.5) for _ in range(6))
        ld = _t(rng, 1)
        got = loss_kl((q_mu, q_ls), z, z_p, ld, (p_mu, p_ls)).item()
        want = kl_oracle(q_mu, q_ls, z, z_p, ld, p_mu, p_ls)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


class TestAdversarial:
    def test_perfect_discriminator(self):
        d, _ = loss_adv([torch.ones(2, 5)], [torch.zeros(2, 5)])
        assert d.item() == 0.0

    def test_fooled(self):
        _, g = loss_adv(None, [torch.ones(2, 5)])
        assert g.item() == 0.0

    def test_half_constants(self):
        d, g = loss_adv([torch.full((3, 7), 0.5)], [torch.full((3, 7), 0.5)])
        assert d.item() == 0.5 and g.item() == 0.25

    def test_empty(self):
        with pytest.raises(ValueError):
            loss_adv([], [])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 4))
    def test_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        real = [_t(rng, 3, 4) for _ in range(n)]
        fake = [_t(rng, 3, 4) for _ in range(n)]
        d, g = loss_adv(real, fake)
        od, og = adv_oracle(real, fake)
        assert d.item() == pytest.approx(od, rel=1e-9)
        assert g.item() == pytest.approx(og, rel=1e-9)


class TestFeatureMatching:
    def test_identical(self):
        f = [[torch.randn(2, 3), torch.randn(4)]]
        assert loss_fm(f, f).item() == 0.0

    def test_plus_one(self):
        r = [[torch.randn(3, 4, dtype=f64)]]
        assert loss_fm(r, [[r[0][0] + 1]]).item() == pytest.approx(1.0, abs=1e-12)

    def test_real_side_detached(self):
        r = torch.randn(3, requires_grad=True)
        f = torch.randn(3, requires_grad=True)
        loss_fm([[r]], [[f]]).backward()
        assert r.grad is None and f.grad is not None

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_fm([[torch.zeros(3)]], [[torch.zeros(4)]])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_oracle(self, seed):
        rng = np.random.default_rng(seed)
        real = [[_t(rng, 3, 4), _t(rng, 2, 5)], [_t(rng, 4)]]
        fake = [[_t(rng, 3, 4), _t(rng, 2, 5)], [_t(rng, 4)]]
        assert loss_fm(real, fake).item() == pytest.approx(fm_oracle(real, fake), rel=1e-9)


class TestAssemble:
    def test_zeros(self):
        b = assemble(0.0, 0.0, 0.0, 0.0, 0.0)
        assert b.total_g == 0.0 and b.total_d == 0.0

    def test_default_weights(self):
        assert assemble(1.0, 1.0, 3.0, 1.0, 1.0, LossWeights()).total_g == 49.0

    def test_total_d(self):
        assert assemble(0.0, 0.0, 3.0, 0.0, 0.0).total_d == 3.0

    def test_names_bad_term(self):
        with pytest.raises(FloatingPointError, match="fm"):
            assemble(1.0, 1.0, 1.0, 1.0, float("inf"))

    def test_unit_weights_give_plain_sum(self):
        assert assemble(1.0, 2.0, 0.0, 3.0, 4.0, LossWeights(1, 1, 1)).total_g == 10.0
