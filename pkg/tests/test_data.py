import os

import numpy as np
import pytest

from fusionnet.data import (BANDS, CEMENT, LANDCOVER, Chip, DataError, apply_augmentation, augment, band_ratio,
                            class_weights, draw_augmentation, file_digest, load_dataset, repeated_splits,
                            site_labels, split_counts, stratified_split, synth_dataset, synth_generate, synth_site)


def chip(values, band="B7", label=CEMENT):
    return Chip(np.asarray(values, dtype=np.float32), label, band, "test")


# --- band ratio -------------------------------------------------------------

def test_band_ratio_value():
    r = band_ratio(chip(np.full((3, 2, 2), 0.2)), chip(np.full((3, 2, 2), 0.1), "B6"))
    assert r.band_id == "B76" and r.label == CEMENT
    assert np.all(np.abs(r.pixels - 2.0) < 1e-4)


def test_band_ratio_identity():
    v = np.random.default_rng(0).uniform(0.1, 1.0, (3, 4, 4))
    r = band_ratio(chip(v), chip(v, "B6"))
    np.testing.assert_allclose(r.pixels, 1.0, atol=1e-5)


def test_band_ratio_zero_denominator_is_finite():
    b6 = np.zeros((3, 2, 2))
    r = band_ratio(chip(np.full((3, 2, 2), 0.3)), chip(b6, "B6"))
    assert np.all(np.isfinite(r.pixels))
    assert r.pixels[0, 0, 0] == pytest.approx(0.3 / 1e-6, rel=1e-6)


def test_band_ratio_misaligned():
    with pytest.raises(DataError):
        band_ratio(chip(np.ones((3, 2, 2))), chip(np.ones((3, 4, 4)), "B6"))


# --- chip format ------------------------------------------------------------

def test_chip_round_trip_bit_exact(tmp_path):
    px = np.random.default_rng(1).standard_normal((3, 8, 8)).astype(np.float32)
    c = Chip(px, LANDCOVER, "B10")
    path = tmp_path / "c.fchp"
    c.save(path)
    back = Chip.load(path)
    assert back.pixels.tobytes() == px.tobytes()
    assert (back.label, back.band_id) == (LANDCOVER, "B10")


def test_chip_header_layout():
    raw = chip(np.zeros((3, 4, 4)), "B76", LANDCOVER).to_bytes()
    assert raw[:4] == b"FCHP" and raw[4] == 1
    assert int.from_bytes(raw[5:9], "little") == 3
    assert int.from_bytes(raw[9:13], "little") == 4 and int.from_bytes(raw[13:17], "little") == 4
    assert raw[17] == LANDCOVER and raw[18] == BANDS.index("B76")
    assert len(raw) == 19 + 4 * 48


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-4], lambda b: b[:10]])
def test_corrupt_chip_rejected(mutate):
    with pytest.raises(DataError):
        Chip.from_bytes(mutate(chip(np.zeros((3, 2, 2))).to_bytes()))


def test_chip_invariants():
    with pytest.raises(DataError):
        chip(np.zeros((3, 2, 3)))
    with pytest.raises(DataError):
        chip(np.full((3, 2, 2), np.nan))
    with pytest.raises(DataError):
        Chip(np.zeros((3, 2, 2)), 2, "B7")


# --- generator --------------------------------------------------------------

def test_reference_class_ratio():
    labels = site_labels(899, 2807, seed=0)
    assert (labels == CEMENT).sum() == 899 and (labels == LANDCOVER).sum() == 2807
    assert 2807 / 899 == pytest.approx(3.12, abs=0.005)


def test_generator_deterministic():
    a = synth_site(3, 7, CEMENT, h=32, preset="hard")
    b = synth_site(3, 7, CEMENT, h=32, preset="hard")
    for band in BANDS:
        assert a[band].pixels.tobytes() == b[band].pixels.tobytes()


def test_same_seed_bit_identical_files(tmp_path):
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        manifest, _ = synth_generate(5, 6, "all", 32, 4, "separable", str(out), repetitions=2)
        digests.append(file_digest([os.path.join(out, r["path"]) for r in manifest["chips"]]))
    assert digests[0] == digests[1]


def test_b76_is_ratio_of_generated_swir():
    s = synth_site(0, 1, CEMENT)
    expect = band_ratio(s["B7"], s["B6"])
    assert s["B76"].pixels.tobytes() == expect.pixels.tobytes()


def test_separable_anomaly_contrast():
    # Mean inside the mask exceeds mean outside by at least 3 background sds, per band, over 100 chips.
    for band in BANDS:
        ds = synth_dataset(100, 5, [band], 32, seed=11, preset="separable")
        cem = ds.labels == CEMENT
        imgs = ds.images[band][cem].astype(np.float64).mean(axis=1)
        masks = ds.masks[cem]
        inside = np.array([im[m].mean() for im, m in zip(imgs, masks)])
        outside = np.array([im[~m].mean() for im, m in zip(imgs, masks)])
        sd = np.array([im[~m].std() for im, m in zip(imgs, masks)])
        z = (inside - outside) / sd
        assert z.mean() >= 3.0, band


def test_tir_anomaly_persists_across_dates():
    s = synth_site(2, 0, CEMENT, bands=("B10",), preset="separable")["B10"]
    for c in range(3):
        assert s.pixels[c][s.mask].mean() > s.pixels[c][~s.mask].mean() + 3.0


def test_landcover_has_no_mask_signal():
    ds = synth_dataset(5, 60, ["B10"], 32, seed=12, preset="separable")
    lc = ds.labels == LANDCOVER
    imgs = ds.images["B10"][lc].astype(np.float64).mean(axis=1)
    diff = np.array([im[m].mean() - im[~m].mean() for im, m in zip(imgs, ds.masks[lc])])
    assert abs(diff.mean()) < 0.3


def test_round_trip_through_manifest(tmp_path):
    manifest, ds = synth_generate(6, 9, "all", 32, 5, "hard", str(tmp_path), repetitions=2)
    back, m2 = load_dataset(str(tmp_path / "manifest.json"))
    assert m2 == manifest
    for b in BANDS:
        assert back.images[b].tobytes() == ds.images[b].tobytes()
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.masks, ds.masks)
    assert len(manifest["chips"]) == 15 * 5
    assert manifest["class_counts"] == {"cement": 6, "landcover": 9}


def test_load_dataset_missing_band(tmp_path):
    synth_generate(5, 5, "b76", 32, 0, "separable", str(tmp_path), repetitions=1)
    with pytest.raises(DataError):
        load_dataset(str(tmp_path / "manifest.json"), ["B10"])


def test_unknown_preset():
    with pytest.raises(DataError):
        synth_dataset(5, 5, ["B10"], preset="easy")


# --- splits -----------------------------------------------------------------

def test_reference_split_counts():
    labels = site_labels(899, 2807, seed=0)
    sp = stratified_split(labels, seed=0)
    assert (labels[sp.test] == CEMENT).sum() == 180
    assert (labels[sp.test] == LANDCOVER).sum() == 561


def test_small_split():
    assert split_counts(10) == (6, 2, 2)
    labels = np.array([0] * 10 + [1] * 10)
    sp = stratified_split(labels, seed=1)
    for part, n in (("train", 6), ("val", 2), ("test", 2)):
        idx = getattr(sp, part)
        assert (labels[idx] == 0).sum() == n and (labels[idx] == 1).sum() == n


def test_split_fractions_exhaustive():
    for n in range(5, 5001):
        train, val, test = split_counts(n)
        assert train + val + test == n
        assert abs(test - 0.2 * n) < 1
        assert abs(val - 0.2 * (n - test)) < 1


def test_split_rejects_tiny_class():
    with pytest.raises(DataError):
        stratified_split(np.array([0] * 4 + [1] * 10), seed=0)


def test_splits_disjoint_cover_and_vary():
    labels = site_labels(40, 120, seed=2)
    splits = repeated_splits(labels, seed=2, repetitions=5)
    for sp in splits:
        allidx = np.concatenate([sp.train, sp.val, sp.test])
        assert len(allidx) == len(labels) and len(set(allidx.tolist())) == len(labels)
    assert len({tuple(sp.test.tolist()) for sp in splits}) == 5
    again = repeated_splits(labels, seed=2, repetitions=5)
    assert all(np.array_equal(a.test, b.test) for a, b in zip(splits, again))


# --- class weights ----------------------------------------------------------

def test_class_weights():
    labels = site_labels(899, 2807, seed=0)
    assert class_weights(labels) == [3.0, 1.0]
    assert class_weights({"cement": 50, "landcover": 50}, "auto") == [1.0, 1.0]
    assert class_weights({"cement": 25, "landcover": 100}, "auto") == [4.0, 1.0]
    with pytest.raises(DataError):
        class_weights({"cement": 0, "landcover": 10})
    with pytest.raises(ValueError):
        class_weights(labels, "sqrt")


# --- augmentation -----------------------------------------------------------

class _Rng:
    """Stand-in generator returning scripted uniforms."""

    def __init__(self, values, k=1):
        self.values, self.k = list(values), k

    def random(self):
        return self.values.pop(0)

    def integers(self, lo, hi):
        return self.k


def test_augment_all_skipped_is_identity():
    c = chip(np.random.default_rng(3).standard_normal((3, 5, 5)))
    out = augment(c, _Rng([0.95, 0.6, 0.2]))
    assert np.array_equal(out.pixels, c.pixels)
    assert (out.label, out.band_id) == (c.label, c.band_id)


def test_four_quarter_turns_identity():
    px = np.random.default_rng(4).standard_normal((3, 5, 5))
    out = px
    for _ in range(4):
        out = apply_augmentation(out, (1, False, False))
    assert np.array_equal(out, px)


def test_augmentation_order_rotate_then_flip():
    px = np.arange(9.0).reshape(1, 3, 3)
    out = apply_augmentation(px, (1, True, False))
    assert np.array_equal(out, np.rot90(px, 1, axes=(1, 2))[..., ::-1])


def test_augmentation_rates():
    rng = np.random.default_rng(5)
    draws = [draw_augmentation(rng) for _ in range(10000)]
    rot = np.mean([d[0] > 0 for d in draws])
    hf = np.mean([d[1] for d in draws])
    vf = np.mean([d[2] for d in draws])
    assert abs(rot - 0.9) <= 0.02 and abs(hf - 0.5) <= 0.02 and abs(vf - 0.1) <= 0.02
    ks = [d[0] for d in draws if d[0]]
    assert set(ks) == {1, 2, 3}


def test_augmentation_is_a_permutation():
    rng = np.random.default_rng(6)
    c = chip(rng.standard_normal((3, 6, 6)))
    for _ in range(20):
        out = augment(c, rng)
        assert np.array_equal(np.sort(out.pixels, axis=None), np.sort(c.pixels, axis=None))
