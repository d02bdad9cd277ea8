import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsasd import autoencoder as ae
from fsasd import scoring as sc
from fsasd.errors import ConfigMismatch, EmptyScores, SingularAfterRidge, TooFewFrames
from fsasd.features import FeatureConfig, FeatureMatrix


def zero_model(dim):
    """Reconstructs every input as 0 (inference mode)."""
    arch = ae.AeArchitecture(dim, (), dim, batch_norm=False, linear_bottleneck=True)
    model = ae.init_model(arch)
    for layer in model.layers:
        layer.W[...] = 0
    return model


def identity_model(dim):
    model = zero_model(dim)
    for layer in model.layers:
        layer.W[...] = np.eye(dim)
    return model


def fm(vectors):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    return FeatureMatrix(vectors, FeatureConfig(n_mels=vectors.shape[1], context_frames=1))


def random_model(seed, dim=6):
    rng = np.random.default_rng(seed)
    model = ae.init_model(ae.AeArchitecture(dim, (5,), 3), seed)
    for layer in model.layers:
        layer.b[:] = rng.standard_normal(layer.b.shape)
        if layer.batch_norm:
            layer.running_mean[:] = rng.standard_normal(layer.running_mean.shape)
            layer.running_var[:] = rng.uniform(0.5, 2.0, layer.running_var.shape)
    return model


def test_score_simple_examples():
    assert sc.score_simple(zero_model(2), fm([1.0, 2.0])) == 2.5
    x = np.random.default_rng(0).standard_normal((9, 4))
    assert sc.score_simple(identity_model(4), fm(x)) == 0.0
    m = random_model(1, 4)
    assert sc.score_simple(m, fm(np.vstack([x, x]))) == pytest.approx(sc.score_simple(m, fm(x)), rel=1e-12)


def test_score_config_mismatch():
    model = zero_model(4)
    model.feature_config = FeatureConfig(n_mels=4, context_frames=1, hop=256)
    with pytest.raises(ConfigMismatch):
        sc.score_simple(model, fm(np.zeros((3, 4))))
    with pytest.raises(ConfigMismatch):
        sc.score_simple(zero_model(4), fm(np.zeros((3, 5))))


def test_fit_covariances_law_of_large_numbers():
    x = np.random.default_rng(0).standard_normal((10000, 4))
    cov = sc.fit_covariances(zero_model(4), x, x[:500])
    assert np.abs(cov.source - np.eye(4)).max() < 0.1
    assert cov.n_source == 10000 and cov.n_target == 500
    reg = cov.source + cov.ridge_source * np.eye(4)
    assert np.abs(reg @ cov.source_inv - np.eye(4)).max() < 1e-6


def test_fit_covariances_degenerate_target():
    x = np.random.default_rng(1).standard_normal((50, 3))
    same = np.ones((2, 3))
    cov = sc.fit_covariances(zero_model(3), x, same)
    assert not cov.target.any()
    np.testing.assert_allclose(cov.target_inv, np.eye(3) / cov.ridge_target)
    with pytest.raises(SingularAfterRidge):
        sc.fit_covariances(zero_model(3), x, same, ridge_scale=0.0)
    with pytest.raises(SingularAfterRidge):
        sc.fit_covariances(zero_model(4), np.random.default_rng(2).standard_normal((3, 4)), x[:, :1].repeat(4, 1), 0.0)
    with pytest.raises(TooFewFrames):
        sc.fit_covariances(zero_model(3), x, same[:1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_fitted_covariance_is_spd(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 5)) @ rng.standard_normal((5, 5))
    cov = sc.fit_covariances(random_model(seed, 5), x, x[: max(2, n // 3)])
    for mat, eps in ((cov.source, cov.ridge_source), (cov.target, cov.ridge_target)):
        np.testing.assert_allclose(mat, mat.T)
        reg = mat + eps * np.eye(5)
        np.linalg.cholesky(reg)
        probes = rng.standard_normal((20, 5))
        assert (np.einsum("ij,jk,ik->i", probes, reg, probes) > 0).all()


def test_mahalanobis_identity_equals_simple():
    for seed in range(10):
        model = random_model(seed)
        x = fm(np.random.default_rng(seed).standard_normal((13, 6)) * 5)
        assert sc.score_mahalanobis(model, sc.DomainCovariances.identity(6), x) == pytest.approx(
            sc.score_simple(model, x), rel=1e-9)


def test_mahalanobis_selects_smaller_branch():
    model = random_model(3)
    x = fm(np.random.default_rng(3).standard_normal((11, 6)))
    cov = sc.DomainCovariances.identity(6)
    cov.source, cov.source_inv = 4 * np.eye(6), np.eye(6) / 4
    e = x.vectors - ae.forward(model, x.vectors)
    # brute force frame-wise minimum
    expected = sum(min(r @ r / 4, r @ r) for r in e) / e.size
    got = sc.score_mahalanobis(model, cov, x)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(sc.score_simple(model, x) / 4, rel=1e-12)


def test_mahalanobis_min_bound_and_zero():
    model = random_model(4)
    rng = np.random.default_rng(4)
    x = fm(rng.standard_normal((30, 6)))
    cov = sc.fit_covariances(model, rng.standard_normal((40, 6)), rng.standard_normal((8, 6)) * 3)
    d_s, d_t = sc.frame_distances(model, cov, x.vectors)
    score = sc.score_mahalanobis(model, cov, x)
    assert score <= d_s.sum() / x.vectors.size + 1e-12
    assert score <= d_t.sum() / x.vectors.size + 1e-12
    ident = identity_model(6)
    assert sc.score_mahalanobis(ident, cov, x) == 0.0


def test_covariance_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cov = sc.fit_covariances(zero_model(3), rng.standard_normal((20, 3)), rng.standard_normal((5, 3)))
    cov.save(tmp_path / "c.bin")
    back = sc.DomainCovariances.load(tmp_path / "c.bin")
    for name in ("source", "target", "source_inv", "target_inv"):
        np.testing.assert_array_equal(getattr(back, name), getattr(cov, name))
    assert (back.n_source, back.ridge_target) == (20, cov.ridge_target)


def test_calibrate_threshold():
    # R-7: position 1 + q*(n-1) = 90.1 on 1..100
    assert sc.calibrate_threshold(np.arange(1, 101), 0.9).phi == pytest.approx(90.1, abs=1e-12)
    assert sc.calibrate_threshold([3.5] * 7, 0.3).phi == 3.5
    assert sc.calibrate_threshold([2.0], 0.99).phi == 2.0
    with pytest.raises(EmptyScores):
        sc.calibrate_threshold([], 0.9)
    t = sc.calibrate_threshold([1.0, 2.0, 4.0], 0.5)
    assert sc.Threshold.from_text(t.to_text()) == t


def test_decide():
    assert sc.decide(2.0, 1.0) == "anomaly"
    assert sc.decide(1.0, 1.0) == "normal"
    assert sc.decide(0.5, sc.Threshold(1.0, "fixed", 0)) == "normal"


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e3))
def test_decide_monotone(phi, score, bump):
    if sc.decide(score, phi) == "anomaly":
        assert sc.decide(score + bump, phi) == "anomaly"
