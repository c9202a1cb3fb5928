import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqsr.datapipe import (
    LR_PATCH,
    bicubic_resize,
    bundled_corpus_dir,
    coord_grid,
    derive_rng,
    keys_kernel,
    load_image_dir,
    make_training_sample,
    sample_scale_pair,
    write_png,
)


def keys_scalar(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def bicubic_oracle(img, out_h, out_w):
    """Per-output-pixel 4x4 kernel sum with clamped source indices."""
    H, W, C = img.shape
    out = np.zeros((out_h, out_w, C))
    for i in range(out_h):
        py = (i + 0.5) * H / out_h - 0.5
        for j in range(out_w):
            px = (j + 0.5) * W / out_w - 0.5
            acc = np.zeros(C)
            for m in range(math.floor(py) - 1, math.floor(py) + 3):
                for n in range(math.floor(px) - 1, math.floor(px) + 3):
                    wgt = keys_scalar(py - m) * keys_scalar(px - n)
                    acc += wgt * img[min(max(m, 0), H - 1), min(max(n, 0), W - 1)]
            out[i, j] = acc
    return np.clip(out, 0, 1)


class TestCoordGrid:
    def test_single(self):
        np.testing.assert_array_equal(coord_grid(1, 1), [[[0.0, 0.0]]])

    def test_two_rows(self):
        np.testing.assert_allclose(coord_grid(2, 3)[:, 0, 0], [-0.5, 0.5])

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 1024), st.integers(1, 1024))
    def test_spacing_and_symmetry(self, h, w):
        g = coord_grid(h, w)
        ys, xs = g[:, 0, 0], g[0, :, 1]
        np.testing.assert_allclose(ys, -ys[::-1], atol=1e-12)
        np.testing.assert_allclose(xs, -xs[::-1], atol=1e-12)
        assert ys.min() == pytest.approx(-(1 - 1 / h)) and ys.max() == pytest.approx(1 - 1 / h)
        if h > 1:
            np.testing.assert_allclose(np.diff(ys), 2 / h)
        if w > 1:
            np.testing.assert_allclose(np.diff(xs), 2 / w)


class TestBicubic:
    def test_kernel_values(self):
        assert keys_kernel(0.0) == 1.0
        assert keys_kernel(1.0) == pytest.approx(0.0)
        assert keys_kernel(2.0) == 0.0
        # partition of unity at an arbitrary phase
        t = 0.37
        assert sum(keys_kernel(t - k) for k in (-1, 0, 1, 2)) == pytest.approx(1.0)

    @pytest.mark.parametrize("size", [(5, 7), (48, 48), (100, 31)])
    def test_constant(self, size):
        img = np.full((20, 24, 3), 0.42)
        np.testing.assert_allclose(bicubic_resize(img, *size), 0.42, atol=1e-6)

    def test_identity(self):
        img = np.random.default_rng(0).random((13, 9, 3))
        np.testing.assert_allclose(bicubic_resize(img, 13, 9), img, atol=1e-6)

    def test_matches_oracle(self):
        img = np.random.default_rng(1).random((8, 8, 3))
        np.testing.assert_allclose(bicubic_resize(img, 4, 4), bicubic_oracle(img, 4, 4), atol=1e-6)

    def test_matches_oracle_upscale_anisotropic(self):
        img = np.random.default_rng(2).random((6, 9, 3))
        np.testing.assert_allclose(bicubic_resize(img, 11, 5), bicubic_oracle(img, 11, 5), atol=1e-6)

    def test_linear_ramp_interior(self):
        yy, xx = np.mgrid[0:40, 0:40]
        ramp = (0.2 + 0.01 * yy + 0.005 * xx)[..., None] * np.ones(3)
        out = bicubic_resize(ramp, 25, 30)
        sy, sx = 40 / 25, 40 / 30
        py = (np.arange(25) + 0.5) * sy - 0.5
        px = (np.arange(30) + 0.5) * sx - 0.5
        expect = 0.2 + 0.01 * py[:, None] + 0.005 * px[None, :]
        np.testing.assert_allclose(out[2:-2, 2:-2, 0], expect[2:-2, 2:-2], atol=1e-3)

    def test_output_clamped(self):
        img = np.zeros((10, 10, 3))
        img[4:6, 4:6] = 1.0
        out = bicubic_resize(img, 23, 23)
        assert out.min() >= 0 and out.max() <= 1

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            bicubic_resize(np.zeros((4, 4, 3)), 0, 4)


class TestScales:
    def test_support_mean_correlation(self):
        rng = np.random.default_rng(3)
        draws = np.array([sample_scale_pair(rng) for _ in range(10_000)])
        assert draws.min() >= 1 and draws.max() <= 4
        assert abs(draws.mean() - 2.5) < 0.05
        r = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert abs(r) < 0.05


class TestTrainingSample:
    def setup_method(self):
        self.img = np.random.default_rng(4).random((200, 210, 3))

    def test_scale_one(self):
        pair, q = make_training_sample(self.img, np.random.default_rng(0), scales=(1.0, 1.0))
        assert pair.hr_patch.shape == (48, 48, 3)
        np.testing.assert_allclose(pair.lr_patch, pair.hr_patch, atol=1e-6)

    def test_queries_on_grid_and_targets(self):
        pair, q = make_training_sample(self.img, np.random.default_rng(1))
        h, w = pair.hr_patch.shape[:2]
        grid = coord_grid(h, w)
        assert len(q) == 256
        np.testing.assert_array_equal(grid[q.index[:, 0], q.index[:, 1]], q.coords)
        # recover the pixel index from the coordinate alone
        iy = np.round((q.coords[:, 0] + 1) * h / 2 - 0.5).astype(int)
        ix = np.round((q.coords[:, 1] + 1) * w / 2 - 0.5).astype(int)
        np.testing.assert_array_equal(pair.hr_patch[iy, ix], q.rgb)

    def test_distinct_and_lr_size(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            pair, q = make_training_sample(self.img, rng)
            assert pair.lr_patch.shape == (LR_PATCH, LR_PATCH, 3)
            assert len({tuple(i) for i in q.index}) == len(q)
            assert pair.hr_patch.shape[0] == max(48, round(48 * pair.s_y))
            assert pair.hr_patch.shape[1] == max(48, round(48 * pair.s_x))

    def test_same_seed_same_stream(self):
        a = [make_training_sample(self.img, derive_rng(5, k)) for k in range(3)]
        b = [make_training_sample(self.img, derive_rng(5, k)) for k in range(3)]
        for (pa, qa), (pb, qb) in zip(a, b):
            assert pa.hr_patch.tobytes() == pb.hr_patch.tobytes()
            assert qa.coords.tobytes() == qb.coords.tobytes()

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_training_sample(np.zeros((40, 40, 3)), np.random.default_rng(0))

    def test_small_image_resamples_scale(self):
        # 100 px fits scales up to ~2.08; retries should usually find one
        img = np.random.default_rng(6).random((100, 100, 3))
        pair, _ = make_training_sample(img, np.random.default_rng(11))
        assert pair.hr_patch.shape[0] <= 100


class TestImageDir:
    def test_order_and_values(self, tmp_path):
        for name in ("c.png", "a.png", "b.png"):
            img = np.zeros((4, 5, 3))
            img[0, 0] = 1.0
            write_png(tmp_path / name, img)
        ds = load_image_dir(tmp_path)
        assert len(ds) == 3
        assert ds.names() == ["a.png", "b.png", "c.png"]
        assert ds[0][0, 0, 0] == 1.0
        again = load_image_dir(tmp_path)
        assert again.names() == ds.names()
        assert again[1].tobytes() == ds[1].tobytes()

    def test_skips_unreadable(self, tmp_path, caplog):
        write_png(tmp_path / "good.png", np.zeros((4, 4, 3)))
        (tmp_path / "bad.png").write_bytes(b"not a png")
        ds = load_image_dir(tmp_path)
        assert ds.names() == ["good.png"]
        assert "bad.png" in caplog.text

    def test_empty_dir(self, tmp_path):
        with pytest.raises(ValueError):
            load_image_dir(tmp_path)

    def test_bundled_corpus(self):
        ds = load_image_dir(bundled_corpus_dir())
        assert len(ds) == 3
        assert all(ds[i].shape == (192, 192, 3) for i in range(3))
