import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from scsc.errors import InvalidInputError
from scsc.ocsc import init_ocsc, ocsc_infer
from scsc.online import infer, init_model
from scsc.pipeline.experiment import (ConfigError, compare_bundles, load_config, memory_rows,
                                      read_csv, run_experiment, summarize, validate_config)
from scsc.pipeline.preprocess import (LcnConfig, PreprocessConfig, TaperConfig, edge_taper,
                                      load_dataset, local_contrast_normalize, preprocess,
                                      standardize, taper_window, to_grayscale)
from scsc.pipeline.synthetic import generate
from scsc.pipeline.tasks import TaskSpec, corrupt, masked_infer, run_task


# -- preprocessing -----------------------------------------------------------

def test_standardize_moments(rng):
    x = 5 + 3 * rng.standard_normal((17, 23))
    y = standardize(x)
    assert abs(y.mean()) < 1e-10
    assert abs(y.var() - 1) < 1e-8


@given(arrays(float, st.tuples(st.integers(2, 12), st.integers(2, 12)),
              elements=st.floats(-100, 100, allow_nan=False)))
def test_standardize_property(x):
    if x.std() < 1e-6:
        return
    y = standardize(x)
    assert abs(y.mean()) < 1e-10
    assert abs(y.var() - 1) < 1e-8


def test_standardize_idempotent(rng):
    y = standardize(rng.random((9, 9)))
    np.testing.assert_allclose(standardize(y), y, atol=1e-12)


def test_constant_image_warns_and_zeros():
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        out = standardize(np.full((4, 4), 7.0))
    assert np.all(out == 0)


def test_grayscale():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 0] = 1.0
    np.testing.assert_allclose(to_grayscale(rgb), 0.299)
    g = np.arange(4.0).reshape(2, 2)
    assert to_grayscale(g) is not None and np.array_equal(to_grayscale(g), g)


def test_lcn_constant_input_is_zero_and_config_checked(rng):
    assert np.all(local_contrast_normalize(np.ones((10, 10))) == 0)
    out = local_contrast_normalize(rng.standard_normal((16, 16)) * 10 + 3)
    assert abs(out.mean()) < 0.5 and out.std() < 2
    with pytest.raises(InvalidInputError):
        LcnConfig(kernel_size=4)
    with pytest.raises(InvalidInputError):
        LcnConfig(epsilon=0.0)


def test_taper_window():
    w = taper_window((10, 12), 3)
    assert w.shape == (10, 12)
    assert np.all(w[3:7, 3:9] == 1)
    assert w[0, 0] < w[1, 1] < w[2, 2] < 1
    np.testing.assert_allclose(w, w[::-1, ::-1])
    assert np.array_equal(taper_window((5, 5), 0), np.ones((5, 5)))
    with pytest.raises(InvalidInputError):
        taper_window((6, 6), 3)
    x = np.ones((10, 12))
    assert np.array_equal(edge_taper(x, TaperConfig(3)), w)


def test_config_round_trip():
    c = PreprocessConfig(lcn=LcnConfig(5, 1e-3), taper=None)
    assert PreprocessConfig.from_dict(c.to_dict()) == c
    assert PreprocessConfig.from_dict(None) == PreprocessConfig()


def _write_images(folder, rng, n=3, shape=(20, 20)):
    folder.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img = (rng.random(shape + (3,)) * 255).astype(np.uint8)
        Image.fromarray(img).save(folder / f"img{i}.png")
    np.save(folder / "raw.npy", rng.standard_normal(shape))


def test_load_dataset_deterministic_manifest(tmp_path, rng):
    _write_images(tmp_path / "d", rng)
    cfg = PreprocessConfig(taper=TaperConfig(4))
    a, ma = load_dataset(tmp_path / "d", cfg)
    b, mb = load_dataset(tmp_path / "d", cfg)
    assert [m.to_dict() for m in ma] == [m.to_dict() for m in mb]
    assert [m.filename for m in ma] == ["img0.png", "img1.png", "img2.png", "raw.npy"]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(x.shape == (20, 20) for x in a)


def test_load_dataset_flags_bad_files(tmp_path, rng):
    d = tmp_path / "d"
    _write_images(d, rng, n=2)
    (d / "broken.png").write_bytes(b"not an image")
    Image.fromarray(np.zeros((8, 8), np.uint8)).save(d / "small.png")
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        signals, manifest = load_dataset(d, PreprocessConfig(lcn=None, taper=None))
    flags = {m.filename: m.ok for m in manifest}
    assert flags["broken.png"] is False and flags["small.png"] is False
    assert len(signals) == 3
    assert all(len(m.sha256) == 64 for m in manifest)


def test_load_dataset_empty_is_fatal(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(InvalidInputError):
        load_dataset(tmp_path / "empty")
    with pytest.raises(InvalidInputError):
        load_dataset(tmp_path / "nope")


def test_preprocess_raw_disabled_is_identity(rng):
    x = rng.standard_normal((6, 6))
    raw = PreprocessConfig(grayscale=False, standardize=False, lcn=None, taper=None)
    assert np.array_equal(preprocess(x, raw), x)


# -- tasks -------------------------------------------------------------------

def test_task_spec_validation():
    with pytest.raises(InvalidInputError):
        TaskSpec("inpaint", mask_fraction=1.5)
    with pytest.raises(InvalidInputError):
        TaskSpec("inpaint", mask_fraction=-0.1)
    with pytest.raises(InvalidInputError):
        TaskSpec("denoise")
    with pytest.raises(InvalidInputError):
        TaskSpec("denoise", noise_variance=-1.0)
    with pytest.raises(InvalidInputError):
        TaskSpec("sharpen")


def test_inpaint_fractions(rng):
    x = rng.standard_normal((10, 10))
    keep_all = corrupt(x, TaskSpec("inpaint", mask_fraction=0.0))
    assert np.all(keep_all.mask == 1) and np.array_equal(keep_all.signal, x)
    drop_all = corrupt(x, TaskSpec("inpaint", mask_fraction=1.0))
    assert np.all(drop_all.mask == 0) and np.all(drop_all.signal == 0)
    half = corrupt(x, TaskSpec("inpaint", mask_fraction=0.5, seed=3))
    assert half.mask.sum() == 50
    again = corrupt(x, TaskSpec("inpaint", mask_fraction=0.5, seed=3))
    assert np.array_equal(half.mask, again.mask)
    other = corrupt(x, TaskSpec("inpaint", mask_fraction=0.5, seed=3), sample_index=1)
    assert not np.array_equal(half.mask, other.mask)


def test_denoise_input_psnr_matches_variance(rng):
    x = rng.standard_normal((128, 128))
    c = corrupt(x, TaskSpec("denoise", noise_variance=0.01, seed=1))
    assert c.input_psnr == pytest.approx(20.0, abs=0.2)
    assert np.all(c.mask == 1)


def test_masked_infer_all_ones_equals_infer():
    syn = generate((12, 12), (3, 3), 2, 4, 1, density=0.03, seed=2)
    m = init_model(syn.support, 2, 4, seed=0, beta=0.05)
    x = syn.signals[0]
    assert np.array_equal(masked_infer(m, x, np.ones_like(x)), infer(m, x).reconstruction)
    o = init_ocsc(syn.support, 4, beta=0.05)
    assert np.array_equal(masked_infer(o, x, np.ones_like(x)), ocsc_infer(o, x)[1])


@pytest.mark.parametrize("which", ["scsc", "ocsc"])
def test_masked_infer_no_observations_gives_zero(which):
    syn = generate((12, 12), (3, 3), 2, 4, 1, density=0.03, seed=2)
    m = (init_model(syn.support, 2, 4, beta=0.05) if which == "scsc"
         else init_ocsc(syn.support, 4, beta=0.05))
    x = syn.signals[0]
    out = masked_infer(m, x, np.zeros_like(x))
    assert np.all(out == 0)
    with pytest.raises(InvalidInputError):
        masked_infer(m, x, np.ones((3, 3)))


def test_masked_infer_ignores_hidden_pixels():
    syn = generate((12, 12), (3, 3), 2, 4, 1, density=0.03, seed=2)
    m = init_model(syn.support, 2, 4, beta=0.05)
    x = syn.signals[0]
    c = corrupt(x, TaskSpec("inpaint", mask_fraction=0.3, seed=1))
    garbage = c.signal + (1 - c.mask) * 100.0
    np.testing.assert_allclose(masked_infer(m, garbage, c.mask), masked_infer(m, c.signal, c.mask),
                               atol=1e-10)


def test_run_task_workers_agree():
    syn = generate((12, 12), (3, 3), 2, 4, 4, density=0.03, seed=2)
    m = init_model(syn.support, 2, 4, beta=0.05)
    task = TaskSpec("denoise", noise_variance=0.01, seed=2)
    serial = run_task(m, syn.signals, task)
    parallel = run_task(m, syn.signals, task, workers=3)
    assert [r["index"] for r in parallel] == [0, 1, 2, 3]
    for a, b in zip(serial, parallel):
        assert a["outputPsnr"] == b["outputPsnr"]
        assert np.array_equal(a["reconstruction"], b["reconstruction"])
    recon = run_task(m, syn.signals[:1], TaskSpec("reconstruct"))
    assert np.isnan(recon[0]["inputPsnr"])


# -- experiments -------------------------------------------------------------

def small_config(**model):
    syn = {"shape": [12, 12], "filterExtents": [3, 3], "R": 2, "K": 4, "samples": 3,
           "density": 0.03, "seed": 1}
    return {"version": 1, "runId": "small",
            "data": {"train": {"synthetic": syn},
                     "test": {"synthetic": {**syn, "samples": 2, "start": 3}}},
            "model": {"R": 2, "K": 4, "filterExtents": [3, 3], "epochs": 1, **model},
            "tasks": [{"kind": "reconstruct"}, {"kind": "denoise", "noiseVariance": 0.01},
                      {"kind": "inpaint", "maskFraction": 0.5, "seed": 2}]}


def test_config_errors_name_the_key():
    bad = small_config()
    bad["model"]["R"] = 0
    with pytest.raises(ConfigError, match=r"model\.R"):
        validate_config(bad)
    bad = small_config()
    bad["tasks"][2]["maskFraction"] = 2
    with pytest.raises(ConfigError, match=r"tasks\.2\.maskFraction"):
        validate_config(bad)
    bad = small_config()
    bad["model"]["bogus"] = 1
    with pytest.raises(ConfigError):
        validate_config(bad)
    with pytest.raises(ConfigError, match="version"):
        validate_config({**small_config(), "version": 2})


def test_load_config_yaml(tmp_path):
    import yaml
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(small_config()))
    assert load_config(p)["runId"] == "small"
    p.write_text("model: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_experiment_bundle_and_determinism(tmp_path):
    a = run_experiment(small_config(), output_dir=tmp_path / "a")
    b = run_experiment(small_config(), output_dir=tmp_path / "b")
    for name in ("model.bin", "model.bin.json", "metrics.csv", "metrics_summary.csv",
                 "trace.csv", "memory.csv", "manifest.json", "series/psnr_vs_time.csv",
                 "series/objective_vs_step.csv", "series/psnr_vs_epoch.csv"):
        assert (a / name).exists(), name
    for name in ("metrics.csv", "metrics_summary.csv", "model.bin", "memory.csv",
                 "series/objective_vs_step.csv", "series/psnr_vs_epoch.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = read_csv(a / "metrics.csv")
    assert [r["task"] for r in rows] == ["reconstruct"] * 2 + ["denoise"] * 2 + ["inpaint"] * 2
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["model"]["algo"] == "scsc" and len(manifest["testData"]) == 2
    assert len(read_csv(a / "trace.csv")) == 3


def test_experiment_ocsc_and_load(tmp_path):
    a = run_experiment(small_config(algo="ocsc"), output_dir=tmp_path)
    assert json.loads((a / "model.bin.json").read_text())["format"] == "OCSC"
    cfg = small_config(load=str(a / "model.bin"))
    cfg["runId"] = "reloaded"
    b = run_experiment(cfg, output_dir=tmp_path)
    assert read_csv(b / "trace.csv") == []
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_compare_bundles(tmp_path):
    a = run_experiment(small_config(), output_dir=tmp_path / "a")
    b = run_experiment(small_config(beta=0.2), output_dir=tmp_path / "b")
    rows = compare_bundles(a, b)
    assert [r["task"] for r in rows] == ["reconstruct", "denoise", "inpaint"]
    for r in rows:
        assert r["delta"] == pytest.approx(r["psnrB"] - r["psnrA"])
    same = compare_bundles(a, a)
    assert all(r["delta"] == 0 for r in same)


def test_memory_rows_report_ratio():
    (row,) = memory_rows(256, 2, 20)
    assert row["scscSecondMomentBytes"] == 256 * 4 * 16
    assert row["ocscSecondMomentBytes"] == 256 * 400 * 16
    assert row["measuredRatio"] == pytest.approx(100.0)
    assert row["theoreticalCR"] == 100


def test_summarize_caps_infinite():
    rows = [{"task": "t", "inputPsnr": 10.0, "outputPsnr": float("inf")},
            {"task": "t", "inputPsnr": 20.0, "outputPsnr": 20.0}]
    (s,) = summarize(rows)
    assert s["count"] == 2 and s["meanInputPsnr"] == 15.0
    assert s["meanOutputPsnr"] == 160.0 and s["gain"] == 145.0


def test_experiment_from_image_folder(tmp_path, rng):
    _write_images(tmp_path / "imgs", rng, n=2, shape=(16, 16))
    cfg = {"version": 1, "runId": "imgs", "outputDir": "out",
           "data": {"train": {"path": "imgs", "preprocess": {"taper": {"margin": 2}}}},
           "model": {"R": 1, "K": 2, "filterExtents": [3, 3], "epochs": 1}}
    import yaml
    (tmp_path / "cfg.yaml").write_text(yaml.safe_dump(cfg))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bundle = run_experiment(tmp_path / "cfg.yaml")
    assert bundle == tmp_path / "out" / "imgs"
    manifest = json.loads((bundle / "manifest.json").read_text())
    assert [m["filename"] for m in manifest["trainData"]] == ["img0.png", "img1.png", "raw.npy"]
