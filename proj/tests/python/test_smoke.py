import math

import numpy as np
import pytest

import mambavsr as mv


def reference_scan(x, delta, a, b, c, d):
    x, delta, a, b, c, d = (np.asarray(v, dtype=np.float64) for v in (x, delta, a, b, c, d))
    h = np.zeros_like(a)
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        h = np.exp(delta[t][:, None] * a) * h + delta[t][:, None] * b[t][None, :] * x[t][:, None]
        out[t] = h @ c[t] + d * x[t]
    return out


@pytest.fixture
def scan_inputs():
    rng = np.random.default_rng(0)
    length, ch, n = 40, 3, 5
    return (
        rng.uniform(-1, 1, (length, ch)),
        rng.uniform(0.01, 0.2, (length, ch)),
        -rng.uniform(0.1, 2.0, (ch, n)),
        rng.uniform(-1, 1, (length, n)),
        rng.uniform(-1, 1, (length, n)),
        rng.uniform(-1, 1, ch),
    )


def test_scan_matches_float64_recurrence(scan_inputs):
    got = mv.scan(*scan_inputs)
    assert got.dtype == np.float32
    assert np.max(np.abs(got - reference_scan(*scan_inputs))) < 1e-5


def test_chunked_scan_agrees(scan_inputs):
    ref = mv.scan(*scan_inputs)
    for chunk in (1, 7, 40):
        assert np.max(np.abs(mv.scan_chunked(*scan_inputs, chunk=chunk) - ref)) <= 1e-5


def test_fiedler_orders_a_path():
    n = 9
    w = np.zeros((n, n))
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = 1.0
    lam, vec, order = mv.fiedler(w)
    ref = np.linalg.eigvalsh(np.eye(n) - w / np.sqrt(np.outer(w.sum(1), w.sum(1))))
    assert abs(lam - ref[1]) < 1e-8
    assert abs(np.linalg.norm(vec) - 1) < 1e-9
    assert order == list(range(n - 1, -1, -1))


def test_interleave_round_trip():
    rng = np.random.default_rng(1)
    clip = rng.uniform(size=(3, 2, 4, 5)).astype(np.float32)
    perm = list(rng.permutation(20))
    tokens = mv.interleave(clip, perm)
    assert tokens.shape == (60, 2)
    # token j*T + f holds frame f at site perm[j]
    assert np.array_equal(tokens[1 * 3 + 2], clip[2, :, perm[1] // 5, perm[1] % 5])
    back = mv.desequentialize(tokens, perm, frames=3, height=4, width=5)
    assert np.array_equal(back, clip)


def test_interleave_rejects_bad_perm():
    clip = np.zeros((1, 1, 2, 2), np.float32)
    with pytest.raises(ValueError):
        mv.interleave(clip, [0, 0, 1, 2])


def test_compass_order_is_a_permutation():
    rng = np.random.default_rng(2)
    feat = rng.uniform(size=(3, 16, 16)).astype(np.float32)
    perm = mv.compass_order(feat, factor=4)
    assert sorted(perm) == list(range(256))


def test_patch_align_recovers_shift():
    rng = np.random.default_rng(3)
    ref = rng.uniform(size=(3, 16, 16)).astype(np.float32)
    nbr = np.roll(ref, shift=4, axis=2)
    aligned, disp = mv.patch_align(ref, nbr, patch=4, radius=1)
    assert disp.shape == (2, 4, 4)
    assert np.all(disp[0, :, :3] == 1)
    assert np.array_equal(aligned[:, :, :12], ref[:, :, :12])


def test_metrics_and_loss():
    a = np.zeros((3, 16, 16), np.float32)
    b = np.full((3, 16, 16), 0.25, np.float32)
    assert math.isclose(mv.psnr(a, b), 20 * math.log10(4), abs_tol=1e-9)
    assert mv.psnr(a, a) == math.inf
    assert mv.ssim(b, b) == 1.0
    assert mv.charbonnier(b, b) == pytest.approx(1e-3, rel=1e-6)


def test_model_at_init_is_bicubic():
    cfg = mv.ModelConfig()
    cfg.channels, cfg.heads, cfg.state_dim, cfg.blocks_per_stage, cfg.patch = 16, 2, 8, 1, 4
    assert mv.ModelConfig.parse(cfg.to_text()).to_text() == cfg.to_text()
    w = mv.ModelWeights.init(cfg)
    assert w.num_params() > 0
    rng = np.random.default_rng(4)
    lr = rng.uniform(size=(2, 3, 8, 8)).astype(np.float32)
    sr = mv.forward(lr, cfg, w)
    assert sr.shape == (2, 3, 32, 32)
    bic = np.stack([mv.bicubic_resize(f, 4.0) for f in lr])
    assert np.max(np.abs(sr - bic)) <= 1e-6


def test_bad_scan_mode():
    cfg = mv.ModelConfig()
    with pytest.raises(ValueError):
        cfg.scan_mode = "zigzag"
