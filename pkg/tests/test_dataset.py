import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from celestine import dataset as ds
from celestine.dataset import (ExposureConfig, ManifestEntry, ManifestError, SceneTemplate,
                               ThroughputModel, electron_flux, fetch_manifest_files,
                               format_split_summary, load_manifest, split_by_body,
                               synthesize_sample, write_manifest)

HEADER = "body_id,category,instrument,obsid,filter,ra_deg,dec_deg,hdu_index,path\n"
H_PLANCK = 6.62607015e-34
C_LIGHT = 2.99792458e8


def _entry(body, cat, i=0):
    return ManifestEntry(body, cat, "ACS_WFC", f"ob{i}", "F606W", 0.0, 0.0, 1, f"{body}_{i}.fits")


def _manifest(counts: dict, samples_per_body=2):
    out = []
    for cat, n in counts.items():
        for b in range(n):
            for k in range(samples_per_body):
                out.append(_entry(f"{cat}{b}", cat, k))
    return out


def test_table_row_parses(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "NGC628,galaxy,ACS_WFC,j96r23b7q,F435W,24.152604,15.769880,1,x.fits\n")
    (e,) = load_manifest(p)
    assert (e.body_id, e.obsid, e.filter, e.hdu_index) == ("NGC628", "j96r23b7q", "F435W", 1)
    assert e.ra_deg == pytest.approx(24.152604) and e.dec_deg == pytest.approx(15.769880)
    assert e.instrument.value == "ACS_WFC" and e.label == 0


def test_header_only(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER)
    assert load_manifest(p) == []


def test_conflicting_category(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "NGC628,galaxy,ACS_WFC,a,F435W,0,0,1,x\nNGC628,nsc,ACS_WFC,b,F435W,0,0,4,y\n")
    with pytest.raises(ManifestError, match="NGC628"):
        load_manifest(p)


@pytest.mark.parametrize("row,msg", [
    ("A,star,ACS_WFC,a,F,0,0,1,x", "category"),
    ("A,galaxy,ACS_WFC,a,F,0,0,0,x", "hdu_index"),
    (",galaxy,ACS_WFC,a,F,0,0,1,x", "body_id"),
    ("A,galaxy,NIRCAM,a,F,0,0,1,x", "NIRCAM"),
    ("A,galaxy,ACS_WFC,a,F,north,0,1,x", "north"),
])
def test_schema_violations_name_the_line(tmp_path, row, msg):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "B,nsc,ACS_WFC,a,F,0,0,1,x\n" + row + "\n")
    with pytest.raises(ManifestError, match=f"line 3.*{msg}"):
        load_manifest(p)


def test_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("body_id,category\n")
    with pytest.raises(ManifestError, match="header"):
        load_manifest(p)


def test_manifest_round_trip(tmp_path):
    entries = _manifest({"galaxy": 2, "nsc": 2})
    entries[0].sha256 = "ab" * 32
    write_manifest(entries, tmp_path / "m.csv")
    assert load_manifest(tmp_path / "m.csv") == entries


def test_ten_bodies_split_eight_two():
    res = split_by_body(_manifest({"galaxy": 10}), 0.8, seed=3)
    assert len({e.body_id for e in res.train}) == 8
    assert len({e.body_id for e in res.test}) == 2


def test_round_half_toward_train():
    # 0.5 * 5 = 2.5 -> 3
    assert ds.train_body_count(5, 0.5) == 3
    assert ds.train_body_count(2, 0.8) == 1  # never leaves the test side empty


def test_too_few_bodies():
    with pytest.raises(ValueError):
        split_by_body(_manifest({"galaxy": 1, "nsc": 3}), 0.8, 0)


manifests = st.dictionaries(st.sampled_from(["galaxy", "nsc"]), st.integers(2, 30), min_size=1)


@settings(max_examples=150, deadline=None)
@given(counts=manifests, spb=st.integers(1, 4), seed=st.integers(0, 2**32 - 1),
       ratio=st.floats(0.05, 0.95))
def test_split_properties(counts, spb, seed, ratio):
    m = _manifest(counts, spb)
    res = split_by_body(m, ratio, seed)
    tr = {e.body_id for e in res.train}
    te = {e.body_id for e in res.test}
    assert not tr & te
    assert sorted(map(id, res.train + res.test)) == sorted(map(id, m))
    for cat, n in counts.items():
        n_tr = len({e.body_id for e in res.train if e.category == cat})
        assert abs(n_tr - math.floor(ratio * n + 0.5)) <= 1
        assert 1 <= n_tr <= n - 1
    again = split_by_body(m, ratio, seed)
    assert again.train == res.train and again.test == res.test


def test_split_depends_on_seed():
    m = _manifest({"galaxy": 20, "nsc": 20})
    splits = {tuple(sorted({e.body_id for e in split_by_body(m, 0.8, s).test})) for s in range(10)}
    assert len(splits) > 1


def test_save_split(tmp_path):
    res = split_by_body(_manifest({"galaxy": 5, "nsc": 5}, 3), 0.8, 1)
    summary = ds.save_split(res, tmp_path)
    assert json.loads((tmp_path / "split_summary.json").read_text()) == summary
    assert summary["train"]["bodies"] == {"galaxy": 4, "nsc": 4, "total": 8}
    assert summary["test"]["samples"]["total"] == 6
    assert len(load_manifest(tmp_path / "train.csv")) == 24


def test_summary_echoes_published_split():
    ref = ds.LCID_REFERENCE
    summary = {"seed": 0, "ratio": 0.8,
               "train": {"bodies": {"galaxy": 38, "nsc": 18, "total": 56},
                         "samples": {"galaxy": 3310, "nsc": 2908, "total": 6218}},
               "test": {"bodies": {"galaxy": 10, "nsc": 5, "total": 15},
                        "samples": {"galaxy": 852, "nsc": 743, "total": 1595}}}
    text = format_split_summary(summary, ref)
    assert "6,218" in text and "1,595" in text and "7,813" in text and "71" in text
    assert "reference only" in text


# ---------------------------------------------------------------- flux


def test_flux_closed_form():
    lo, hi, s0 = 400e-9, 700e-9, 3.7e-9
    model = ThroughputModel.flat(s0, lo, hi, n=10_001, throughput=1.0)
    t, area = 120.0, 4.5
    closed = t * area * s0 * (hi**2 - lo**2) / (2 * H_PLANCK * C_LIGHT)
    got = electron_flux(model, t, area)
    assert abs(got - closed) / closed < 1e-6


def test_flux_zero_time():
    assert electron_flux(ds.default_throughput(), 0.0, 4.5) == 0.0


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0.5, 1e4), a=st.floats(0.1, 50), k=st.integers(2, 9), seed=st.integers(0, 999))
def test_flux_linearity_and_monotonicity(t, a, k, seed):
    rng = np.random.default_rng(seed)
    grid = np.sort(rng.uniform(300e-9, 900e-9, 40))
    grid = np.unique(grid)
    sed = rng.uniform(0, 1e-9, grid.size)
    tau = rng.uniform(0, 1, grid.size)
    m = ThroughputModel(grid, sed, tau)
    c = electron_flux(m, t, a)
    assert electron_flux(m, k * t, a) == pytest.approx(k * c, rel=1e-12)
    assert electron_flux(m, t, k * a) == pytest.approx(k * c, rel=1e-12)
    brighter = ThroughputModel(grid, sed + rng.uniform(0, 1e-9, grid.size), tau)
    assert electron_flux(brighter, t, a) >= c
    clearer = ThroughputModel(grid, sed, np.minimum(1.0, tau + rng.uniform(0, 0.5, grid.size)))
    assert electron_flux(clearer, t, a) >= c


def test_model_validation():
    with pytest.raises(ValueError):
        ThroughputModel([5e-7], [1.0], [1.0])
    with pytest.raises(ValueError):
        ThroughputModel([5e-7, 6e-7], [-1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        ThroughputModel([6e-7, 5e-7], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        ThroughputModel([5e-7, 6e-7], [1.0, 1.0], [1.0, 1.5])


# ---------------------------------------------------------------- synthesis


def _tmpl(kind, **kw):
    return SceneTemplate(kind=kind, height=48, width=96, **kw)


def test_zero_exposure_is_black():
    s = synthesize_sample(_tmpl("galaxy"), ExposureConfig(t=0.0, a_eff=4.5), ds.default_throughput(), 1)
    assert np.all(s.pixels == 0)


@pytest.mark.parametrize("kind", ["galaxy", "nsc"])
def test_synthesis_deterministic_and_bounded(kind):
    exp = ExposureConfig(t=300.0, a_eff=4.5, read_noise_sigma=3.0, sky_level=20.0)
    a = synthesize_sample(_tmpl(kind), exp, ds.default_throughput(), seed=11)
    b = synthesize_sample(_tmpl(kind), exp, ds.default_throughput(), seed=11)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert a.pixels.min() >= 0 and a.pixels.max() <= 65535
    assert a.label == ds.LABELS[kind]


@pytest.mark.parametrize("kind", ["galaxy", "nsc"])
def test_rendered_signal_totals_budget(kind):
    model = ds.default_throughput()
    c = electron_flux(model, 250.0, 4.5)
    scene = ds.render_scene(_tmpl(kind), np.random.default_rng(0)) * c
    assert abs(scene.sum() - c) / c < 1e-3
    assert np.all(scene >= 0)


def test_full_size_template_default():
    t = SceneTemplate(kind="galaxy")
    assert (t.height, t.width) == (2048, 4096)


def test_saturation_guard():
    exp = ExposureConfig(t=1e7, a_eff=4.5)
    with pytest.raises(ds.SynthesisError):
        synthesize_sample(SceneTemplate("galaxy", 8, 16), exp, ds.default_throughput(), 0)


@settings(max_examples=20, deadline=None)
@given(t=st.floats(0, 5000), seed=st.integers(0, 10_000), kind=st.sampled_from(["galaxy", "nsc"]))
def test_pixels_always_in_range(t, seed, kind):
    exp = ExposureConfig(t=t, a_eff=4.5, read_noise_sigma=5.0, sky_level=10.0)
    try:
        s = synthesize_sample(SceneTemplate(kind, 16, 32), exp, ds.default_throughput(), seed)
    except ds.SynthesisError:
        return
    assert s.pixels.min() >= 0 and s.pixels.max() <= 65535


def test_short_exposure_is_noisier():
    model = ds.default_throughput()

    def snr(t):
        s = synthesize_sample(_tmpl("galaxy", center=(0.5, 0.5)),
                              ExposureConfig(t=t, a_eff=4.5, read_noise_sigma=3, sky_level=20), model, 5)
        return s.pixels.max() / s.pixels[:5, :5].std()

    assert snr(20.0) < snr(2000.0)


def test_synthetic_set_balanced():
    x, y, bodies = ds.synthetic_set(3, 16, 32, seed=2)
    assert x.shape == (6, 16, 32)
    assert list(y) == [0, 1] * 3
    assert len(set(bodies)) == 6


# ---------------------------------------------------------------- fetching


def _files(tmp_path, n=3):
    src = tmp_path / "src"
    src.mkdir()
    out = []
    for i in range(n):
        p = src / f"f{i}.fits"
        p.write_bytes(bytes(range(256)) * (i + 1))
        out.append(ManifestEntry(f"B{i}", "galaxy", "ACS_WFC", "o", "F", 0, 0, 1, str(p)))
    return out


def test_fetch_copies_byte_identical(tmp_path):
    m = _files(tmp_path)
    rep = fetch_manifest_files(m, tmp_path / "cache", workers=2)
    assert len(rep.fetched) == 3 and not rep.skipped and not rep.failed
    for e in m:
        assert (tmp_path / "cache" / ds.local_name(e)).read_bytes() == open(e.path, "rb").read()


def test_fetch_cached_skips(tmp_path):
    m = _files(tmp_path)
    fetch_manifest_files(m, tmp_path / "cache")
    rep = fetch_manifest_files(m, tmp_path / "cache")
    assert len(rep.fetched) == 0 and len(rep.skipped) == 3


def test_fetch_missing_reported(tmp_path):
    m = _files(tmp_path)
    m.append(ManifestEntry("X", "nsc", "ACS_WFC", "o", "F", 0, 0, 1, str(tmp_path / "nope.fits")))
    rep = fetch_manifest_files(m, tmp_path / "cache")
    assert len(rep.fetched) == 3
    assert [p for p, _ in rep.failed] == [str(tmp_path / "nope.fits")]


def test_fetch_file_url_and_checksum(tmp_path):
    (e,) = _files(tmp_path, 1)
    digest = hashlib.sha256(open(e.path, "rb").read()).hexdigest()
    url = ManifestEntry("B", "galaxy", "ACS_WFC", "o", "F", 0, 0, 1, "file://" + e.path, digest)
    assert len(fetch_manifest_files([url], tmp_path / "c1").fetched) == 1
    bad = ManifestEntry("B", "galaxy", "ACS_WFC", "o", "F", 0, 0, 1, e.path, "0" * 64)
    rep = fetch_manifest_files([bad], tmp_path / "c2")
    assert rep.failed and "checksum" in rep.failed[0][1]
    assert not (tmp_path / "c2" / "f0.fits").exists()
