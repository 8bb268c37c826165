"""Metric tests: threshold rules, the overlap scores against a loop-based
pixel counter, the dice/iou identity, and report assembly plus CSV I/O."""

from types import SimpleNamespace

import numpy as np
import pytest

from maskcorrect import autodiff as ad, metrics, nets
from oracles import overlap_counts


def _report(rows, **kw):
    meta = dict(method="mmc", noise="dilation", proportion=0.4, seed=1, split="test")
    meta.update(kw)
    return metrics.MetricsReport(rows=rows, **meta)


class TestBinarize:
    def test_tie_goes_to_foreground(self):
        out = metrics.binarize(np.full((4, 4), 0.5), 0.5)
        assert out.dtype == np.uint8
        assert np.all(out == 1)

    def test_high_threshold_empties_sigmoid_zero_field(self):
        soft = np.full((4, 4), 0.5)  # sigmoid(0)
        assert not metrics.binarize(soft, 0.999).any()

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            soft = rng.random((8, 8))
            taus = np.sort(rng.uniform(0.01, 0.99, size=4))
            counts = [metrics.binarize(soft, t).sum() for t in taus]
            assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_accepts_tensor_input(self):
        t = ad.tensor(np.full((2, 2), 0.75))
        assert np.all(metrics.binarize(t, 0.5) == 1)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.5, 1.5])
    def test_tau_out_of_range(self, tau):
        with pytest.raises(ValueError):
            metrics.binarize(np.zeros((2, 2)), tau)

    def test_rejects_values_outside_unit_interval(self):
        with pytest.raises(ValueError, match="outside"):
            metrics.binarize(np.array([[0.5, 1.2]]), 0.5)


class TestOverlapScores:
    def test_identical_nonempty(self):
        m = np.zeros((6, 6), dtype=np.uint8)
        m[2:4, 2:4] = 1
        assert metrics.iou(m, m) == 1.0
        assert metrics.dice(m, m) == 1.0

    def test_disjoint_nonempty(self):
        p = np.zeros((6, 6), dtype=np.uint8)
        g = np.zeros((6, 6), dtype=np.uint8)
        p[0, 0:3] = 1
        g[5, 0:3] = 1
        assert metrics.iou(p, g) == 0.0
        assert metrics.dice(p, g) == 0.0

    def test_half_overlapping_squares(self):
        # |P| = |G| = 4 with 2 shared pixels: union 6 -> iou 1/3, dice 1/2
        p = np.zeros((4, 4), dtype=np.uint8)
        g = np.zeros((4, 4), dtype=np.uint8)
        p[1, 0:2] = 1
        p[2, 0:2] = 1
        g[1, 1:3] = 1
        g[2, 1:3] = 1
        inter, np_, ng = overlap_counts(p, g)
        assert (inter, np_, ng) == (2, 4, 4)
        assert metrics.iou(p, g) == pytest.approx(1.0 / 3.0, abs=1e-15)
        assert metrics.dice(p, g) == pytest.approx(0.5, abs=1e-15)

    def test_both_empty_scores_one(self):
        z = np.zeros((5, 5), dtype=np.uint8)
        assert metrics.iou(z, z) == 1.0
        assert metrics.dice(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            metrics.iou(np.zeros((3, 3)), np.zeros((4, 4)))
        with pytest.raises(ValueError, match="mismatch"):
            metrics.dice(np.zeros((3, 3)), np.zeros((4, 4)))

    def test_fuzz_against_pixel_counter(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = (rng.random((9, 9)) < rng.uniform(0, 1)).astype(np.uint8)
            g = (rng.random((9, 9)) < rng.uniform(0, 1)).astype(np.uint8)
            inter, cp, cg = overlap_counts(p, g)
            union = cp + cg - inter
            want_iou = 1.0 if union == 0 else inter / union
            want_dice = 1.0 if cp + cg == 0 else 2.0 * inter / (cp + cg)
            assert metrics.iou(p, g) == want_iou
            assert metrics.dice(p, g) == want_dice

    def test_fuzz_laws(self):
        # symmetry, range, and dice = 2*iou/(1+iou) on every pair
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = (rng.random((7, 7)) < rng.uniform(0, 1)).astype(np.uint8)
            g = (rng.random((7, 7)) < rng.uniform(0, 1)).astype(np.uint8)
            d, i = metrics.dice(p, g), metrics.iou(p, g)
            assert d == metrics.dice(g, p)
            assert i == metrics.iou(g, p)
            assert 0.0 <= d <= 1.0 and 0.0 <= i <= 1.0
            assert abs(d - 2.0 * i / (1.0 + i)) <= 1e-12


def _fixed_logits(logit_fn):
    """seg_forward stand-in driven by a plain array function of the input."""

    def fake(params, x):
        data = logit_fn(x.data if isinstance(x, ad.Tensor) else np.asarray(x))
        return SimpleNamespace(logits=ad.tensor(data))

    return fake


def _split(rng, n, h=8):
    ids = tuple(f"im{i:03d}" for i in range(n))
    masks = (rng.random((n, 1, h, h)) > 0.6).astype(float)
    return metrics.Split(ids, rng.random((n, 1, h, h)), masks)


class TestEvaluate:
    def test_oracle_logits_score_one(self, monkeypatch):
        rng = np.random.default_rng(3)
        split = _split(rng, 5)
        # index images back to their gold masks via values, not identity:
        # the fake net receives batches, so carry masks alongside
        lookup = {x.tobytes(): m for x, m in zip(split.images, split.masks)}

        def logit_fn(x):
            return np.stack([10.0 * (2.0 * lookup[im.tobytes()] - 1.0) for im in x])

        monkeypatch.setattr(nets, "seg_forward", _fixed_logits(logit_fn))
        report = metrics.evaluate({}, split, split_name="test")
        assert report.mean_dice == 1.0
        assert report.mean_iou == 1.0

    def test_constant_half_model_closed_form(self, monkeypatch):
        # zero logits -> sigmoid 0.5 -> tau 0.5 claims every pixel
        rng = np.random.default_rng(4)
        split = _split(rng, 4)
        monkeypatch.setattr(nets, "seg_forward", _fixed_logits(np.zeros_like))
        report = metrics.evaluate({}, split)
        hw = split.images.shape[2] * split.images.shape[3]
        for row, mask in zip(report.rows, split.masks):
            g = int(mask.sum())
            assert row.p_pixels == hw and row.g_pixels == g
            assert row.dice == pytest.approx(2.0 * g / (g + hw), abs=1e-15)

    def test_row_count_ids_and_batching(self):
        rng = np.random.default_rng(5)
        split = _split(rng, 7, h=16)
        W = nets.init_seg(nets.SegArch(e_levels=1, base_channels=2), seed=0)
        a = metrics.evaluate(W, split, batch_size=3)
        b = metrics.evaluate(W, split, batch_size=32)
        assert len(a.rows) == 7
        assert [r.image_id for r in a.rows] == list(split.ids)
        assert a.rows == b.rows  # batch boundaries cannot change scores

    def test_empty_split_rejected(self):
        empty = metrics.Split((), np.zeros((0, 1, 8, 8)), np.zeros((0, 1, 8, 8)))
        with pytest.raises(ValueError, match="empty"):
            metrics.evaluate({}, empty)


class TestReport:
    def test_means_are_arithmetic(self):
        rows = [metrics.ImageRow("a", 0.5, 0.25, 10, 12),
                metrics.ImageRow("b", 1.0, 1.0, 4, 4),
                metrics.ImageRow("c", 0.0, 0.0, 0, 7)]
        rep = _report(rows)
        assert rep.mean_dice == pytest.approx(0.5)
        assert rep.mean_iou == pytest.approx(1.25 / 3.0)

    def test_csv_rows_append_mean_marker(self):
        rows = [metrics.ImageRow("a", 0.5, 0.25, 10, 12)]
        out = _report(rows).csv_rows()
        assert out[0][:6] == ("mmc", "dilation", 0.4, 1, "test", "a")
        assert out[-1][5] == "MEAN"
        assert len(out) == 2

    def test_header_constant(self):
        assert metrics.CSV_HEADER == ("method", "noise", "proportion", "seed",
                                      "split", "image_id", "dice", "iou",
                                      "p_pixels", "g_pixels")

    def test_csv_round_trip(self, tmp_path):
        rows = [metrics.ImageRow("a", 0.5, 0.25, 10, 12),
                metrics.ImageRow("b", 1.0, 1.0, 4, 4)]
        path = tmp_path / "metrics.csv"
        metrics.write_csv([_report(rows), _report(rows, split="train", seed=2)], path)
        got = metrics.read_csv(path)
        assert len(got) == 6  # 2 reports x (2 rows + MEAN)
        assert got[0]["image_id"] == "a" and got[0]["dice"] == 0.5
        assert got[2]["image_id"] == "MEAN"
        assert got[3]["split"] == "train" and got[3]["seed"] == 2

    def test_csv_header_enforced(self, tmp_path):
        path = tmp_path / "metrics.csv"
        path.write_text("method,noise\nmmc,dilation\n")
        with pytest.raises(ValueError, match="header"):
            metrics.read_csv(path)
