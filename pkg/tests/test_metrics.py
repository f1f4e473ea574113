"""Metric tests: PSNR closed forms, SSIM against a sliding-window loop
oracle, report aggregation, wrong-key attack helpers, and the CSV schema."""
import csv

import numpy as np
import pytest

from secureflow.flow import FlowConfig, init_model
from secureflow.imageio import Image
from secureflow.metrics import (PSNR_CAP, MetricReport, _flip_one_bit,
                                _resample_key, evaluate_suite, perceptual,
                                psnr, ssim, write_csv)
from secureflow.obfuscators import eval_spec

SIDE = 16


def rand(shape, seed):
    return np.random.default_rng(seed).uniform(0, 1, shape).astype(np.float32)


def tiny_model(seed=180):
    model = init_model(FlowConfig(side=SIDE, blocks=1, growth=4), seed=seed)
    rng = np.random.default_rng(seed + 1)
    for s in model.blocks[0].subnets():
        s.weights[-1].data[...] = rng.normal(0, 0.02, s.weights[-1].data.shape)
    return model


class TestPsnr:
    def test_identical_hits_cap(self):
        a = rand((3, 16, 16), 181)
        assert psnr(a, a) == PSNR_CAP == 99.0

    def test_constant_offset_closed_form(self):
        a = np.zeros((3, 8, 8))
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
        assert psnr(a, a + 0.5) == pytest.approx(10 * np.log10(4.0), abs=1e-9)

    def test_tiny_error_capped(self):
        a = np.zeros((3, 8, 8))
        assert psnr(a, a + 1e-6) == PSNR_CAP

    def test_symmetric_and_accepts_images(self):
        a, b = rand((3, 16, 16), 182), rand((3, 16, 16), 183)
        assert psnr(a, b) == psnr(b, a)
        assert psnr(Image(a), Image(b)) == psnr(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 8, 8)), np.zeros((3, 8, 4)))


def oracle_ssim(a, b):
    n, sigma = 11, 1.5
    off = np.arange(n, dtype=np.float64) - (n - 1) / 2
    g = np.exp(-(off ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    win = np.outer(g, g)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    C, H, W = a.shape
    vals = []
    for c in range(C):
        for i in range(H - n + 1):
            for j in range(W - n + 1):
                pa = a[c, i:i + n, j:j + n].astype(np.float64)
                pb = b[c, i:i + n, j:j + n].astype(np.float64)
                mua, mub = (win * pa).sum(), (win * pb).sum()
                vaa = (win * pa * pa).sum() - mua * mua
                vbb = (win * pb * pb).sum() - mub * mub
                cab = (win * pa * pb).sum() - mua * mub
                vals.append(((2 * mua * mub + c1) * (2 * cab + c2))
                            / ((mua * mua + mub * mub + c1) * (vaa + vbb + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_identical_is_one(self):
        a = rand((3, 16, 16), 184)
        assert ssim(a, a) == 1.0

    def test_matches_loop_oracle(self):
        a, b = rand((3, 14, 14), 185), rand((3, 14, 14), 186)
        assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-10)

    def test_oracle_on_smooth_images(self):
        yy, xx = np.mgrid[0:14, 0:14] / 14.0
        a = np.stack([yy, xx, yy * xx]).astype(np.float32)
        b = np.clip(a + 0.05 * rand((3, 14, 14), 187) - 0.025, 0, 1)
        assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-10)

    def test_constant_pair_closed_form(self):
        a = np.full((1, 12, 12), 0.3)
        b = np.full((1, 12, 12), 0.7)
        want = (2 * 0.3 * 0.7 + 1e-4) / (0.09 + 0.49 + 1e-4)
        assert ssim(a, b) == pytest.approx(want, abs=1e-12)

    def test_noise_scores_below_blur_of_same_psnr(self):
        # Structural metric: equal-MSE perturbations are not equal-SSIM.
        base = np.zeros((1, 16, 16))
        base[:, :, 8:] = 1.0
        noisy = base + 0.2 * np.sign(rand((1, 16, 16), 188) - 0.5)
        assert ssim(base, noisy) < ssim(base, base * 0.8 + 0.1)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 10, 16)), np.zeros((3, 10, 16)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 16, 16)), np.zeros((3, 16, 12)))


class TestPerceptualWrapper:
    def test_zero_on_identical(self):
        a = rand((3, 16, 16), 189)
        assert perceptual(a, a) == 0.0

    def test_accepts_images_and_positive(self):
        a, b = Image(rand((3, 16, 16), 190)), Image(rand((3, 16, 16), 191))
        assert perceptual(a, b) > 0


class TestWrongKeyHelpers:
    def test_flip_one_bit_changes_exactly_one_bit(self):
        rng = np.random.default_rng(192)
        pw = b"sixteen byte key"
        for _ in range(50):
            flipped = _flip_one_bit(pw, rng)
            assert len(flipped) == len(pw)
            x = np.frombuffer(pw, np.uint8) ^ np.frombuffer(flipped, np.uint8)
            assert int(np.unpackbits(x).sum()) == 1

    def test_resample_never_returns_original(self):
        rng = np.random.default_rng(193)
        pw = bytes(16)
        for _ in range(20):
            cand = _resample_key(pw, rng)
            assert cand != pw and len(cand) == 16


class TestReport:
    def test_aggregates_are_group_means(self):
        rep = MetricReport()
        a, b = rand((3, 16, 16), 194), rand((3, 16, 16), 195)
        rep.add("p", "gb", "randwr", a, b)
        rep.add("p", "pl", "randwr", a, a)
        rep.add("q", "gb", "randwr", b, b)
        agg = rep.aggregates()
        assert set(agg) == {"p", "q"}
        assert agg["p"]["psnr_db"] == pytest.approx((psnr(a, b) + 99.0) / 2)
        assert agg["q"]["ssim"] == 1.0
        assert rep.mean("p") == agg["p"]["psnr_db"]
        assert rep.mean("q", "perc") == 0.0


class TestEvaluateSuite:
    def test_row_inventory(self):
        model = tiny_model()
        images = [Image(rand((3, SIDE, SIDE), 196 + i)) for i in range(2)]
        specs = [eval_spec("pl"), eval_spec("gb")]
        keys = [b"k1", "k2"]  # str keys are encoded
        rep = evaluate_suite(model, images, specs, keys, seed=7)
        assert len(rep.rows) == 12
        pairs = {r.role_pair for r in rep.rows}
        assert pairs == {"protected_vs_template", "recovered_vs_original",
                         "wrong1bit_vs_original", "wrong1bit_vs_template",
                         "wrongrand_vs_original", "wrongrand_vs_template"}
        assert {r.obfuscator for r in rep.rows} == {"pl", "gb"}
        assert all(r.mode == "randwr" for r in rep.rows)  # model default

    def test_deterministic_given_seed(self):
        model = tiny_model(197)
        images = [Image(rand((3, SIDE, SIDE), 198))]
        a = evaluate_suite(model, images, [eval_spec("pl")], [b"pw"], seed=3)
        b = evaluate_suite(model, images, [eval_spec("pl")], [b"pw"], seed=3)
        assert [r.psnr_db for r in a.rows] == [r.psnr_db for r in b.rows]

    def test_mode_override_and_validation(self):
        model = tiny_model(199)
        images = [Image(rand((3, SIDE, SIDE), 200))]
        rep = evaluate_suite(model, images, [eval_spec("pl")], [b"pw"], mode="obfswr")
        assert rep.rows[0].mode == "obfswr"
        with pytest.raises(ValueError):
            evaluate_suite(model, [], [], [])
        with pytest.raises(ValueError):
            evaluate_suite(model, images, [], [b"pw"])


class TestCsv:
    def test_schema_and_aggregate_rows(self, tmp_path):
        model = tiny_model(201)
        images = [Image(rand((3, SIDE, SIDE), 202))]
        rep = evaluate_suite(model, images, [eval_spec("mb")], [b"pw"])
        path = tmp_path / "report.csv"
        write_csv(rep, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["role_pair", "obfuscator", "mode", "psnr_db", "ssim", "perc"]
        assert len(rows) == 1 + 6 + 6  # header + per-image + aggregates
        agg = [r for r in rows[1:] if r[0].startswith("mean:")]
        assert len(agg) == 6 and all(r[1] == "*" for r in agg)
        plain = [r for r in rows[1:] if not r[0].startswith("mean:")]
        by_pair = {r[0]: float(r[3]) for r in plain}
        assert by_pair["protected_vs_template"] == pytest.approx(
            rep.mean("protected_vs_template"), abs=1e-5)

    def test_aggregates_optional(self, tmp_path):
        rep = MetricReport()
        a = rand((3, 16, 16), 203)
        rep.add("p", "gb", "randwr", a, a)
        path = tmp_path / "bare.csv"
        write_csv(rep, path, include_aggregates=False)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 2
