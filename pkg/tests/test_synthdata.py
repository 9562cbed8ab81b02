from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from borderconv.errors import ConfigError
from borderconv.synthdata import (RG_JITTER, RG_OFFSET, ShiftMode, gen_quadrant, gen_red_green, load_dataset,
                                  reflect_rows, save_dataset, shift_image)


def test_quadrant_placement():
    ds = gen_quadrant(0, 5)
    for img, label in zip(ds.images, ds.labels):
        rows = np.nonzero(img.sum(axis=(0, 2)))[0]
        cols = np.nonzero(img.sum(axis=(0, 1)))[0]
        lo = 0 if label == 0 else 24
        assert rows.min() >= lo and rows.max() < lo + 8
        assert cols.min() >= lo and cols.max() < lo + 8


def test_quadrant_classes_share_pixel_values():
    ds = gen_quadrant(1, 6)
    a = np.sort(ds.images[ds.labels == 0].ravel())
    b = np.sort(ds.images[ds.labels == 1].ravel())
    assert np.array_equal(a, b)


def test_quadrant_border():
    ds = gen_quadrant(0, 2, border=16)
    assert ds.images.shape == (4, 3, 64, 64)
    assert not ds.images[:, :, :16].any() and not ds.images[:, :, :, -16:].any()


def test_quadrant_infeasible():
    with pytest.raises(ConfigError):
        gen_quadrant(0, 2, canvas=10, patch=6)
    with pytest.raises(ConfigError):
        gen_quadrant(0, 2, border=-1)


def test_generators_deterministic():
    assert np.array_equal(gen_quadrant(3, 4).images, gen_quadrant(3, 4).images)
    a, b = gen_red_green(5, 20, 10, 10), gen_red_green(5, 20, 10, 10)
    for split in a:
        assert np.array_equal(a[split].images, b[split].images)
        assert a[split].manifest == b[split].manifest
    assert not np.array_equal(gen_quadrant(3, 4).images, gen_quadrant(4, 4).images)


def test_class0_blocks_sit_in_upper_rows():
    ds = gen_red_green(0, 400, 0, 0)["train"]
    top = ds.images[ds.labels == 0]
    assert not top[:, :, :2].any() and not top[:, :, 13:].any()
    centres = [r["red"][0] + 1.5 for r in ds.records if r["label"] == 0]
    assert 3.5 <= min(centres) and max(centres) <= 10.5


def test_red_green_layout():
    splits = gen_red_green(0)
    assert {k: len(v) for k, v in splits.items()} == {"train": 2000, "val": 1000, "test": 1000}
    lo, hi = RG_JITTER
    for ds in splits.values():
        assert Counter(ds.labels.tolist()) == {0: len(ds) // 2, 1: len(ds) // 2}
        for rec, img in zip(ds.records, ds.images):
            (rr, rc), (gr, gc) = rec["red"], rec["green"]
            assert rr == gr
            if rec["label"] == 0:
                assert rc + 4 < gc and RG_OFFSET + lo <= rr <= RG_OFFSET + hi
            else:
                assert gc + 4 < rc and 28 - RG_OFFSET - hi <= rr <= 28 - RG_OFFSET - lo
            assert img[0].sum() == 16 and img[1].sum() == 16 and img[2].sum() == 0
            assert img[0, rr:rr + 4, rc:rc + 4].all() and img[1, gr:gr + 4, gc:gc + 4].all()


def test_red_green_rows_cover_every_stride_phase_evenly():
    ds = gen_red_green(0, 2000, 0, 0)["train"]
    for label in (0, 1):
        rows = [r["red"][0] for r in ds.records if r["label"] == label]
        counts = Counter(row % 8 for row in rows)
        assert len(counts) == 8 and max(counts.values()) - min(counts.values()) <= 1


def test_dissimilar_mirrors_similar():
    sim = gen_red_green(2, 0, 0, 40)["test"]
    dis = gen_red_green(2, 0, 0, 40, "dissimilar")["test"]
    assert np.array_equal(dis.labels, sim.labels)
    assert reflect_rows(dis.records) == sim.records
    assert np.array_equal(dis.images, sim.images[:, :, ::-1, :][:, :, np.r_[0:32], :])
    # the dissimilar rows of each class are the training rows of the other class
    train = gen_red_green(2, 400, 0, 0)["train"]
    for label in (0, 1):
        seen = {r["red"][0] for r in train.records if r["label"] != label}
        assert {r["red"][0] for r in dis.records if r["label"] == label} <= seen


def test_independent_rows_flag():
    ds = gen_red_green(0, 200, 0, 0, shared_row=False)["train"]
    assert any(r["red"][0] != r["green"][0] for r in ds.records)


def test_red_green_bad_arguments():
    with pytest.raises(ConfigError):
        gen_red_green(0, variant="mirrored")
    with pytest.raises(ConfigError):
        gen_red_green(0, 3, 2, 2)
    with pytest.raises(ConfigError):
        gen_red_green(0, jitter=(-9, 3))


def test_order_label_survives_translation():
    ds = gen_red_green(0, 0, 0, 20)["test"]
    for i in range(len(ds)):
        for d in ds.feasible_diagonal_shifts(i, 4):
            img = ds.render(i, d, d)[0]
            red_col = np.nonzero(img[0].sum(axis=0))[0].min()
            green_col = np.nonzero(img[1].sum(axis=0))[0].min()
            assert (red_col < green_col) == (ds.labels[i] == 0)


def test_render_reproduces_images():
    for ds in (gen_quadrant(0, 3, border=4), gen_red_green(0, 0, 0, 10)["test"]):
        for i in range(len(ds)):
            assert np.array_equal(ds.render(i)[0], ds.images[i])


def test_render_out_of_frame():
    ds = gen_quadrant(0, 1)
    with pytest.raises(ConfigError):
        ds.render(0, -1, 0)


def test_shift_modes():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 1, 2] = 1.0
    assert np.array_equal(shift_image(x, 0, 0), x)
    moved = shift_image(x, 1, 1, ShiftMode.ZERO_FILL)
    assert moved[0, 0, 2, 3] == 1.0 and moved.sum() == 1.0
    assert np.array_equal(shift_image(x, 5, 5, "cyclic"), x)
    assert shift_image(x, 4, 0, "zero_fill").sum() == 0.0
    with pytest.raises(ConfigError):
        shift_image(x, 3, 0, max_shift=2)
    with pytest.raises(ConfigError):
        shift_image(x, 1, 0, "crop_from_canvas")


@settings(max_examples=30, deadline=None)
@given(st.integers(-6, 6), st.integers(-6, 6), st.integers(0, 2**31))
def test_zero_fill_matches_cyclic_away_from_edges(dy, dx, seed):
    x = np.zeros((1, 2, 20, 20))
    x[:, :, 6:14, 6:14] = np.random.default_rng(seed).random((1, 2, 8, 8))
    assert np.array_equal(shift_image(x, dy, dx), shift_image(x, dy, dx, "cyclic"))


def test_crop_from_canvas_matches_render():
    ds = gen_red_green(0, 0, 0, 4)["test"]
    got = shift_image(ds.images[:1], 2, 2, "crop_from_canvas", dataset=ds, index=0)
    assert np.array_equal(got, ds.render(0, 2, 2))


def test_feasible_shifts_stay_in_frame():
    ds = gen_quadrant(0, 2)
    assert ds.feasible_diagonal_shifts(0, 30) == list(range(0, 25))
    assert ds.feasible_diagonal_shifts(1, 3) == list(range(-3, 1))


def test_dataset_round_trip(tmp_path):
    ds = gen_red_green(1, 0, 0, 6)["test"]
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.labels, ds.labels)
    assert back.manifest == ds.manifest
    assert (tmp_path / "d" / "labels.csv").read_text().startswith("index,label\n0,0\n")
