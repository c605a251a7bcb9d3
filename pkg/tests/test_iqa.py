import numpy as np
import pytest

from surprisal import datakit, iqa, sae
from surprisal.metrics import srcc
from surprisal.numcore import make_rng, sym_eig


def test_ygcr_gray_and_red(rng):
    v = rng.random()
    out = iqa.rgb_to_ygcr(np.full((1, 1, 3), v))[0, 0]
    np.testing.assert_allclose(out, [v, v, 0.5], atol=1e-15)
    red = iqa.rgb_to_ygcr(np.array([[[1.0, 0.0, 0.0]]]))[0, 0]
    assert red[0] == pytest.approx(0.299, abs=1e-15)
    assert red[1] == 0.0
    assert red[2] == pytest.approx(0.5 + 0.701 / 1.402, abs=1e-15)


def test_ygcr_range(rng):
    out = iqa.rgb_to_ygcr(rng.random((50, 50, 3)))
    assert out.min() >= 0.0 and out.max() <= 1.0
    # extremes of Cr sit at pure red and pure cyan
    ext = iqa.rgb_to_ygcr(np.array([[[1.0, 0, 0], [0, 1.0, 1.0]]]))
    np.testing.assert_allclose(ext[0, :, 2], [1.0, 0.0], atol=1e-15)


def test_ygcr_channel_error():
    with pytest.raises(ValueError):
        iqa.rgb_to_ygcr(np.zeros((4, 4, 4)))


def test_patches_grid(rng):
    assert iqa.make_patches(rng.random((16, 16, 3))).shape == (4, 192)
    img = rng.random((17, 17, 3))
    p = iqa.make_patches(img)
    assert p.shape == (4, 192)
    # raster order: second patch is the top-right tile
    np.testing.assert_array_equal(p[1], img[0:8, 8:16].ravel())
    with pytest.raises(ValueError):
        iqa.make_patches(rng.random((7, 20, 3)))


def test_patches_random_seeded():
    img = make_rng(0).random((20, 30, 3))
    a = iqa.make_patches(img, "random", make_rng(5), 12)
    b = iqa.make_patches(img, "random", make_rng(5), 12)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (12, 192)


def correlated_patches(rng, m=5000, d=iqa.PATCH_DIM):
    mix = rng.normal(size=(d, d)) * np.exp(-np.arange(d) / 40.0)
    return rng.normal(size=(m, d)) @ mix.T + rng.normal(size=d)


def test_whitening_eigenbasis_band(rng):
    x = correlated_patches(rng)
    eps = iqa.WHITEN_EPS
    mean, zca = iqa.fit_whitening(x, eps)
    xc = x - mean
    lam, q = sym_eig(xc.T @ xc / len(x))
    w = xc @ zca
    cov = w.T @ w / len(x)
    # in the eigenbasis the whitened covariance is diag(lam / (lam + eps))
    cq = q.T @ cov @ q
    off = cq - np.diag(np.diag(cq))
    assert np.abs(off).max() <= 1e-6
    band = lam / (lam + eps)
    assert np.all(np.diag(cq) >= band.min() - 1e-9) and np.all(np.diag(cq) <= band.max() + 1e-9)
    np.testing.assert_allclose(np.diag(cq), band, atol=1e-9)


def test_whitening_eps_zero_identity(rng):
    x = correlated_patches(rng, 3000)
    mean, zca = iqa.fit_whitening(x, eps=0.0)
    w = (x - mean) @ zca
    np.testing.assert_allclose(w.T @ w / len(x), np.eye(iqa.PATCH_DIM), atol=1e-6)
    np.testing.assert_allclose(zca @ np.linalg.inv(zca), np.eye(iqa.PATCH_DIM), atol=1e-6)


def test_whitening_white_input(rng):
    # exactly white sample covariance: zca is the identity
    x = rng.normal(size=(5000, 12))
    x -= x.mean(axis=0)
    x = x @ np.linalg.inv(np.linalg.cholesky(x.T @ x / len(x))).T
    _, zca = iqa.fit_whitening(x, eps=1e-12)
    np.testing.assert_allclose(zca, np.eye(12), atol=1e-6)


def test_whitening_needs_enough_patches(rng):
    with pytest.raises(ValueError):
        iqa.fit_whitening(rng.normal(size=(100, 192)))


@pytest.fixture(scope="module")
def small_model():
    rng = make_rng(8)
    imgs = datakit.make_pristine_corpus(6, 32, seed=3)
    cfg = sae.default_sae_sgd(3)
    model, trace = iqa.fit_iqa_model(imgs, rng, n_patches=2000, hidden=24, cfg=cfg)
    return model, imgs


def test_identity_scores_exactly_one(small_model):
    model, imgs = small_model
    for img in imgs:
        assert iqa.unique_score(model, img, img).score == 1.0
        assert iqa.surprisal_score(model, img, img).score == 1.0
        assert iqa.surprisal_score(model, img, img, cross=True).score == 1.0


def test_record_fields(small_model):
    model, imgs = small_model
    rec = iqa.score_pair(model, imgs[0], imgs[1], "proposed", ref_id="a", dist_id="b", mos=2.0)
    assert rec.method == "proposed" and (rec.ref_id, rec.dist_id, rec.mos) == ("a", "b", 2.0)
    assert -1.0 <= rec.score <= 1.0 and np.isfinite(rec.score)
    assert iqa.score_pair(model, imgs[0], imgs[1], "baseline").method == "baseline"


def test_size_mismatch(small_model):
    model, imgs = small_model
    with pytest.raises(ValueError):
        iqa.unique_score(model, imgs[0], imgs[0][:16])
    with pytest.raises(ValueError):
        iqa.surprisal_score(model, imgs[0], imgs[0][:, :24])


def test_projection_length(small_model):
    model, imgs = small_model
    f = iqa.surprisal_project(model, imgs[0])
    assert f.shape == (16 * 2 * model.sae.h,)
    per_patch = f.reshape(16, 2, model.sae.h)
    assert np.all(per_patch[:, 0] >= 0) and set(np.unique(per_patch[:, 1])) <= {-1.0, 0.0, 1.0}


def test_baseline_threshold(small_model):
    model, imgs = small_model
    f = iqa.unique_features(model, imgs[0])
    assert np.all((f == 0) | (f >= model.act_threshold))


def test_srcc_monotone_invariance(small_model):
    model, imgs = small_model
    a = iqa.surprisal_project(model, imgs[0])
    b = iqa.surprisal_project(model, imgs[1])

    shifted = a - a.min() + 1.0
    assert srcc(shifted**3, b) == pytest.approx(srcc(a, b), abs=1e-12)


def test_zero_gradient_midpoint():
    # lam = 0 and a decoder that reconstructs exactly: the projection is degenerate
    d, h = iqa.PATCH_DIM, 4
    m = sae.SparseAutoencoder(np.zeros((h, d)), np.zeros(h), np.zeros((d, h)), np.zeros(d), lam=0.0)
    model = iqa.IqaModel(m, np.zeros(d), np.eye(d))
    img = np.full((16, 16, 3), 0.3)
    # a flat image has identical patches; the decoder bias reproduces them
    m.b_dec[:] = model.preprocess(img)[0]
    assert np.all(sae.decoder_surprisal(m, model.preprocess(img)) == 0)
    f = iqa.surprisal_project(model, img)
    np.testing.assert_array_equal(f, 0.0)


def test_rescale_modes(small_model):
    model, imgs = small_model
    a = iqa.surprisal_project(model, imgs[0], rescale="image")
    b = iqa.surprisal_project(model, imgs[0], rescale="patch")
    raw = iqa.surprisal_project(model, imgs[0], raw=True)
    assert a.shape == b.shape == raw.shape
    assert not np.array_equal(a, b)


def test_noise_monotone_baseline(small_model):
    model, imgs = small_model
    worse = 0
    for i, img in enumerate(imgs):
        s1 = iqa.unique_score(model, img, datakit.distort(img, datakit.DistortionSpec("gauss_noise", 1, i))).score
        s5 = iqa.unique_score(model, img, datakit.distort(img, datakit.DistortionSpec("gauss_noise", 5, i))).score
        worse += s5 <= s1
    assert worse / len(imgs) >= 0.9


def test_save_load(small_model, tmp_path):
    model, imgs = small_model
    iqa.save_iqa_model(model, tmp_path)
    back = iqa.load_iqa_model(tmp_path)
    assert iqa.surprisal_score(back, imgs[0], imgs[1]).score == iqa.surprisal_score(model, imgs[0], imgs[1]).score
    with pytest.raises(FileNotFoundError):
        iqa.load_iqa_model(tmp_path / "missing")


def test_model_validation(small_model):
    model, _ = small_model
    with pytest.raises(ValueError):
        iqa.IqaModel(model.sae, model.patch_mean, model.zca + np.triu(np.ones_like(model.zca), 1))
    with pytest.raises(ValueError):
        iqa.IqaModel(model.sae, model.patch_mean, model.zca, act_threshold=-1)
