import numpy as np
import pytest

from decoder_bcd.graph_scm import full_mask, sample_ground_truth, single_edge_mask
from decoder_bcd.posterior import (
    NoiseDraws,
    PosteriorParams,
    decode,
    forward,
    forward_with_draws,
    init_posterior,
    sample_from_eta,
    sample_posterior,
)
from decoder_bcd.sampler import FixedValue, generate_dataset


@pytest.fixture
def scm():
    return sample_ground_truth(6, 10, 2.0, 0.1, np.random.default_rng(0))


def truth_params(scm, log_scale=-30.0):
    """Empty-mask posterior carrying the true model."""
    return PosteriorParams(
        mu_L=np.zeros(0), log_scale_L=np.zeros(0), log_sigma=np.log(scm.sigma),
        decoder=scm.proj.copy(), mask=(), fixed_L=scm.L, perm=scm.perm,
    )


class TestInit:
    def test_empty_mask(self, scm, rng):
        p = init_posterior((), scm.L, 6, 10, rng)
        assert p.mu_L.size == 0
        np.testing.assert_array_equal(sample_posterior(p, rng).L_hat, scm.L)

    def test_single_edge(self, rng):
        p = init_posterior(single_edge_mask(6), np.zeros((6, 6)), 6, 10, rng)
        assert p.mu_L.size == 1 and p.log_scale_L.size == 1
        assert p.decoder.shape == (6, 10)

    def test_deterministic(self):
        a = init_posterior(full_mask(6), np.zeros((6, 6)), 6, 10, np.random.default_rng(3))
        b = init_posterior(full_mask(6), np.zeros((6, 6)), 6, 10, np.random.default_rng(3))
        assert a.to_dict() == b.to_dict()

    def test_initial_distributions(self):
        p = init_posterior(full_mask(40), np.zeros((40, 40)), 40, 100, np.random.default_rng(0))
        assert np.std(p.mu_L) == pytest.approx(0.1, rel=0.05)
        np.testing.assert_allclose(np.exp(p.log_scale_L), 0.1)
        assert p.sigma == pytest.approx(0.1)
        assert np.std(p.decoder) == pytest.approx(1 / np.sqrt(40), rel=0.05)


class TestSample:
    def test_degenerate_scale(self, rng):
        p = init_posterior(full_mask(4), np.zeros((4, 4)), 4, 5, rng)
        p.log_scale_L[:] = np.log(1e-12)
        s = sample_posterior(p, rng)
        rows, cols = zip(*p.mask)
        np.testing.assert_allclose(s.L_hat[list(rows), list(cols)], p.mu_L, atol=1e-9)

    def test_monte_carlo_mean(self):
        rng = np.random.default_rng(1)
        p = init_posterior(full_mask(4), np.zeros((4, 4)), 4, 5, rng)
        p.log_scale_L[:] = np.log(0.5)
        rows, cols = map(list, zip(*p.mask))
        draws = np.array([sample_posterior(p, rng).L_hat[rows, cols] for _ in range(10_000)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - p.mu_L) < 3 * se)

    def test_mask_outside_is_fixed(self, scm, rng):
        p = init_posterior(single_edge_mask(6), scm.L, 6, 10, rng)
        for _ in range(50):
            L_hat = sample_posterior(p, rng).L_hat
            keep = np.ones((6, 6), dtype=bool)
            keep[5, 4] = False
            np.testing.assert_array_equal(L_hat[keep], scm.L[keep])

    def test_reparameterization_is_affine(self, rng):
        p = init_posterior(full_mask(4), np.zeros((4, 4)), 4, 5, rng)
        eta = rng.standard_normal(len(p.mask))
        delta = rng.normal(size=len(p.mask))
        base = sample_from_eta(p, eta).L_hat
        shifted = p.copy()
        shifted.mu_L = p.mu_L + delta
        rows, cols = map(list, zip(*p.mask))
        np.testing.assert_allclose(sample_from_eta(shifted, eta).L_hat[rows, cols] - base[rows, cols], delta, atol=1e-15)
        assert np.array_equal(sample_from_eta(p, eta).eps_draw, eta)


class TestDecode:
    def test_oracle_decoder(self, scm, rng):
        data = generate_dataset(scm, 50, 0, rng=rng)
        np.testing.assert_allclose(decode(data.z_eval, truth_params(scm)), data.X)

    def test_zero(self, scm):
        assert not decode(np.zeros((3, 6)), truth_params(scm)).any()

    def test_naive(self, scm, rng):
        z = rng.normal(size=(4, 6))
        dec = truth_params(scm).decoder
        naive = [[sum(z[i, k] * dec[k, j] for k in range(6)) for j in range(10)] for i in range(4)]
        np.testing.assert_allclose(decode(z, truth_params(scm)), naive, rtol=1e-12)

    def test_mismatch(self, scm):
        with pytest.raises(ValueError):
            decode(np.zeros((2, 5)), truth_params(scm))


class TestForward:
    def test_matched_generative_model(self, scm):
        rng = np.random.default_rng(4)
        data = generate_dataset(scm, 100_000, 0, rng=rng)
        n = data.n
        _, X_hat, _ = forward(truth_params(scm), data.mask, data.values, rng)
        mean_scale = np.sqrt(np.mean(np.diag(np.cov(data.X.T))))
        assert np.max(np.abs(X_hat.mean(0) - data.X.mean(0))) < 0.03 * mean_scale
        cx, ch = np.cov(data.X.T), np.cov(X_hat.T)
        assert np.linalg.norm(ch - cx) / np.linalg.norm(cx) < 0.03
        assert X_hat.shape == (n, 10)

    def test_latents_match_truth_distribution(self, scm):
        rng = np.random.default_rng(8)
        data = generate_dataset(scm, 100_000, 0, rng=rng)
        z_hat, _, _ = forward(truth_params(scm), data.mask, data.values, rng)
        cz = np.cov(data.z_eval.T)
        assert np.linalg.norm(np.cov(z_hat.T) - cz) / np.linalg.norm(cz) < 0.03

    def test_intervention_labels_clamp(self, scm, rng, backend):
        data = generate_dataset(scm, 0, 120, "single", FixedValue(100.0), sets=6, rng=rng)
        p = init_posterior(full_mask(6), np.zeros((6, 6)), 6, 10, rng)
        z_hat, _, _ = forward(p, data.mask, data.values, rng)
        m = data.mask.astype(bool)
        assert np.all(z_hat[m] == 100.0)

    def test_one_sample_per_batch(self, scm, rng):
        p = init_posterior(full_mask(6), np.zeros((6, 6)), 6, 10, rng)
        draws = NoiseDraws.draw(p, 7, rng)
        fp = forward_with_draws(p, np.zeros((7, 6)), np.zeros((7, 6)), draws)
        assert fp.sample.eps_draw.shape == (15,)
        assert fp.z_hat.shape == (7, 6)

    def test_empty_batch(self, scm, rng):
        with pytest.raises(ValueError):
            forward(truth_params(scm), np.zeros((0, 6)), np.zeros((0, 6)), rng)


def test_checkpoint_round_trip(rng):
    p = init_posterior(full_mask(5), np.zeros((5, 5)), 5, 7, rng, perm=rng.permutation(5))
    back = PosteriorParams.from_dict(p.to_dict())
    assert back.to_dict() == p.to_dict()
    assert back.mask == p.mask
