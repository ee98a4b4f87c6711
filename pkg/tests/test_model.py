import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bocamp.model import (
    DenseOperator,
    NoiseModel,
    Prior,
    SpectrumSpec,
    build_operator,
    fwht,
    geometric_singular_values,
    sample_instance,
)


def test_geometric_two_values_by_hand():
    s = geometric_singular_values(2, 2, 2.0)
    # sigma0^2 = 2 (1 - 1/4) / (1 - 1/16) = 8/5, sigma1^2 = sigma0^2 / 4
    np.testing.assert_allclose(s**2, [8 / 5, 2 / 5], rtol=1e-14)
    assert abs(np.sum(s**2) / 2 - 1.0) < 1e-14


def test_geometric_fig_scale():
    s = geometric_singular_values(1024, 2048, 17.0)
    assert s[0] / s[-1] == pytest.approx(17.0, rel=1e-12)
    assert np.sum(s**2) / 2048 == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(s) < 0)


def test_geometric_kappa_to_one():
    s = geometric_singular_values(64, 128, 1.0 + 1e-9)
    np.testing.assert_allclose(s**2, 2.0, rtol=1e-8)


@pytest.mark.parametrize("M,kappa", [(1, 2.0), (8, 1.0), (8, 0.5)])
def test_geometric_rejects(M, kappa):
    with pytest.raises(ValueError):
        geometric_singular_values(M, 16, kappa)


@given(st.integers(2, 300), st.integers(0, 300), st.floats(1.0001, 1e4))
def test_geometric_normalisation(M, extra, kappa):
    N = M + extra
    s = geometric_singular_values(M, N, kappa)
    assert np.sum(s**2) / N == pytest.approx(1.0, rel=1e-12)
    assert s[0] / s[-1] == pytest.approx(kappa, rel=1e-10)


def test_fwht_matches_dense_hadamard():
    from scipy.linalg import hadamard

    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 16))
    np.testing.assert_allclose(fwht(x), x @ hadamard(16).T / 4.0, atol=1e-13)
    with pytest.raises(ValueError):
        fwht(np.ones(12))


def test_row_orthogonal_gram():
    op = build_operator(SpectrumSpec("row_orthogonal", 64, 128), seed=3)
    A = op.matvec(np.eye(128)).T
    np.testing.assert_allclose(A @ A.T, 2.0 * np.eye(64), atol=1e-10)


def test_near_one_kappa_matches_row_orthogonal():
    eps = 1e-6
    geo = build_operator(SpectrumSpec("geometric", 32, 64, kappa=1 + eps), seed=1)
    ro = build_operator(SpectrumSpec("row_orthogonal", 32, 64), seed=1)
    assert np.max(np.abs(geo.singular_values - ro.singular_values)) < 10 * eps


@pytest.mark.parametrize("kind", ["geometric", "row_orthogonal", "iid_gaussian"])
def test_adjointness(kind):
    op = build_operator(SpectrumSpec(kind, 128, 256, kappa=10.0), seed=5)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.standard_normal(256)
        z = rng.standard_normal(128)
        lhs = np.dot(op.matvec(x), z)
        rhs = np.dot(x, op.rmatvec(z))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(z)


def test_transform_isometry_and_spectrum():
    op = build_operator(SpectrumSpec("geometric", 256, 512, kappa=17.0), seed=2)
    x = np.random.default_rng(0).standard_normal(512)
    full = op.right.apply(x)
    assert np.linalg.norm(full) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    np.testing.assert_allclose(op.right.adjoint(full), x, atol=1e-12)
    assert np.sum(op.singular_values**2) / 512 == pytest.approx(1.0, abs=1e-12)


def test_transform_matches_dense_svd():
    op = build_operator(SpectrumSpec("geometric", 16, 32, kappa=5.0), seed=9)
    A = op.matvec(np.eye(32)).T
    np.testing.assert_allclose(np.linalg.svd(A, compute_uv=False), op.singular_values, rtol=1e-12)


def test_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        build_operator(SpectrumSpec("geometric", 24, 48, kappa=2.0), seed=0)


def test_iid_gaussian_moments():
    op = build_operator(SpectrumSpec("iid_gaussian", 512, 512), seed=4)
    assert isinstance(op, DenseOperator)
    entries = op.A.ravel()
    se = entries.std() / np.sqrt(entries.size)
    assert abs(entries.mean()) < 3 * se
    assert entries.var() == pytest.approx(1 / 512, rel=0.02)


def test_iid_gaussian_mean_shift():
    op = build_operator(SpectrumSpec("iid_gaussian", 256, 512, gamma=0.36), seed=4)
    assert op.A.mean() == pytest.approx(np.sqrt(0.36 / 256), rel=0.05)


def test_spec_validation():
    with pytest.raises(ValueError):
        SpectrumSpec("geometric", 8, 16, kappa=1.0)
    with pytest.raises(ValueError):
        SpectrumSpec("row_orthogonal", 32, 16)
    with pytest.raises(ValueError):
        SpectrumSpec("iid_gaussian", 8, 16, gamma=1.0)
    with pytest.raises(ValueError):
        SpectrumSpec("fourier", 8, 16)
    assert SpectrumSpec("row_orthogonal", 8, 16).delta == 0.5


def test_prior_and_noise_validation():
    with pytest.raises(ValueError):
        Prior(0.0)
    with pytest.raises(ValueError):
        Prior(1.5)
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    p = Prior(0.25)
    assert (1 - p.rho) * 0 + p.rho * p.slab_variance == 1.0
    assert NoiseModel.from_snr_db(30).sigma2 == pytest.approx(1e-3)
    assert NoiseModel(1e-3).snr_db == pytest.approx(30.0)


def test_instance_model_and_determinism():
    spec = SpectrumSpec("geometric", 128, 256, kappa=3.0)
    a = sample_instance(spec, Prior(0.1), NoiseModel(1e-3), seed=11)
    b = sample_instance(spec, Prior(0.1), NoiseModel(1e-3), seed=11)
    np.testing.assert_array_equal(a.x_true, b.x_true)
    np.testing.assert_array_equal(a.y, b.y)
    c = sample_instance(spec, Prior(0.1), NoiseModel(1e-3), seed=12)
    assert not np.array_equal(a.y, c.y)


def test_full_density_is_gaussian():
    x = Prior(1.0).sample(20000, np.random.default_rng(0))
    assert np.all(x != 0)
    assert x.var() == pytest.approx(1.0, rel=0.05)


def test_sparsity_count():
    spec = SpectrumSpec("row_orthogonal", 1024, 2048)
    inst = sample_instance(spec, Prior(0.1), NoiseModel(1e-3), seed=0)
    k = np.count_nonzero(inst.x_true)
    assert abs(k - 204.8) <= 3 * np.sqrt(2048 * 0.1 * 0.9)


def test_noise_level():
    spec = SpectrumSpec("row_orthogonal", 1024, 2048)
    powers = []
    for seed in range(100):
        inst = sample_instance(spec, Prior(0.1), NoiseModel(1e-3), seed)
        w = inst.y - inst.operator.matvec(inst.x_true)
        powers.append(np.mean(w**2))
    assert np.mean(powers) == pytest.approx(1e-3, rel=0.05)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_seed_determinism_property(seed):
    spec = SpectrumSpec("row_orthogonal", 16, 32)
    a = sample_instance(spec, Prior(0.3), NoiseModel(0.01), seed)
    b = sample_instance(spec, Prior(0.3), NoiseModel(0.01), seed)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.x_true, b.x_true)
