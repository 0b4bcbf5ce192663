import numpy as np
import pytest

from attnatr.data import (Dataset, DatasetError, ImageIoError, PhoenixError,
                          SarImage, SynthConfig, center_crop_or_pad, load_dataset,
                          minmax_normalize, parse_mstar_phoenix, read_pgm,
                          synth_dataset, synth_manifest, synth_sample,
                          write_image, write_phoenix, write_synth_dir)
from attnatr.rng import SplitMix64, derive_seed


# ---------------------------------------------------------------------------
# phoenix parsing


def test_phoenix_roundtrip_within_float32():
    rng = np.random.default_rng(1)
    mag = rng.uniform(size=(4, 4))
    mag.reshape(-1)[0] = 0.0  # pin the normalization range
    mag.reshape(-1)[-1] = 1.0
    img, header = parse_mstar_phoenix(write_phoenix(mag))
    assert header["NumberOfRows"] == "4"
    assert np.abs(img.magnitude - mag).max() < 1e-6  # float32 quantization


def test_phoenix_header_whitespace_tolerance():
    blob = write_phoenix(np.array([[0.0, 1.0]]), extra_header={"TargetType": " t72 "})
    img, header = parse_mstar_phoenix(blob)
    assert header["TargetType"] == "t72"
    assert int(header["NumberOfRows"]) == 1


def test_phoenix_missing_sentinel():
    with pytest.raises(PhoenixError, match="sentinel"):
        parse_mstar_phoenix(b"garbage bytes that are not a header")


def test_phoenix_truncated_payload_names_counts():
    blob = write_phoenix(np.zeros((8, 8)))
    with pytest.raises(PhoenixError, match="truncated") as err:
        parse_mstar_phoenix(blob[:-32])
    assert "512" in str(err.value)  # expected byte count for 8x8 mag+phase


def test_phoenix_missing_required_key():
    text = "[PhoenixHeaderVer01.04]\nNumberOfRows= 4\n[EndofPhoenixHeader]\n"
    with pytest.raises(PhoenixError, match="NumberOfColumns"):
        parse_mstar_phoenix(text.encode())


def test_phoenix_non_integer_geometry():
    text = ("[PhoenixHeaderVer01.04]\nNumberOfRows= x\nNumberOfColumns= 4\n"
            "PhoenixHeaderLength= 10\n[EndofPhoenixHeader]\n")
    with pytest.raises(PhoenixError, match="non-integer"):
        parse_mstar_phoenix(text.encode())


def test_phoenix_crop_and_pad():
    img, _ = parse_mstar_phoenix(write_phoenix(np.eye(6)), size=4)
    assert img.magnitude.shape == (4, 4)
    img, _ = parse_mstar_phoenix(write_phoenix(np.eye(2)), size=4)
    assert img.magnitude.shape == (4, 4)


def test_phoenix_fuzz_smoke():
    # random and mutated buffers must only ever raise PhoenixError
    rng = SplitMix64(99)
    base = write_phoenix(np.random.default_rng(2).uniform(size=(3, 3)))
    for i in range(1000):
        mode = i % 3
        if mode == 0:
            n = 1 + rng.below(200)
            buf = bytes(int(rng.below(256)) for _ in range(n))
        elif mode == 1:
            buf = base[:rng.below(len(base) + 1)]
        else:
            buf = bytearray(base)
            for _ in range(1 + rng.below(8)):
                buf[rng.below(len(buf))] = rng.below(256)
            buf = bytes(buf)
        try:
            parse_mstar_phoenix(buf)
        except PhoenixError:
            pass


def test_normalization_spans_unit_interval():
    mag = np.random.default_rng(3).uniform(2.0, 9.0, size=(5, 5))
    out = minmax_normalize(mag)
    assert out.min() == 0.0 and out.max() == 1.0
    assert np.all(minmax_normalize(np.full((3, 3), 4.2)) == 0.0)


# ---------------------------------------------------------------------------
# image files


def test_pgm_golden_bytes(tmp_path):
    path = tmp_path / "a.pgm"
    write_image("pgm", path, np.array([[1.0]]))
    assert path.read_bytes() == b"P5\n1 1\n255\n\xff"
    write_image("pgm", path, np.array([[0.0]]))
    assert path.read_bytes() == b"P5\n1 1\n255\n\x00"


def test_pgm_payload_size(tmp_path):
    path = tmp_path / "ramp.pgm"
    write_image("pgm", path, np.array([[0.0, 0.25], [0.5, 1.0]]))
    raw = path.read_bytes()
    header = b"P5\n2 2\n255\n"
    assert raw.startswith(header)
    assert len(raw) - len(header) == 4


def test_ppm_golden_bytes(tmp_path):
    path = tmp_path / "a.ppm"
    write_image("ppm", path, np.array([[[255.0, 0.0, 128.0]]]))
    assert path.read_bytes() == b"P6\n1 1\n255\n\xff\x00\x80"


def test_pgm_roundtrip(tmp_path):
    gray = np.round(np.random.default_rng(4).uniform(size=(6, 9)) * 255) / 255.0
    path = tmp_path / "r.pgm"
    write_image("pgm", path, gray)
    assert np.abs(read_pgm(path) - gray).max() < 1e-12


def test_write_image_unknown_kind(tmp_path):
    with pytest.raises(ImageIoError, match="unknown image kind"):
        write_image("png", tmp_path / "x.png", np.zeros((2, 2)))


def test_read_pgm_rejects_truncation(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(ImageIoError, match="truncated"):
        read_pgm(path)


def test_read_pgm_rejects_bad_geometry(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n1 1\n0\n\x00")
    with pytest.raises(ImageIoError, match="geometry"):
        read_pgm(path)
    path.write_bytes(b"P5\n0 4\n255\n")
    with pytest.raises(ImageIoError, match="geometry"):
        read_pgm(path)


# ---------------------------------------------------------------------------
# synthetic dataset


def test_synth_clean_render_is_deterministic():
    cfg = SynthConfig(speckle=False, jitter=0.0)
    a = synth_sample(cfg, 1, seed=5).magnitude
    b = synth_sample(cfg, 1, seed=5).magnitude
    assert np.array_equal(a, b)


def test_synth_region_intensity_ordering():
    cfg = SynthConfig()
    clean_cfg = SynthConfig(speckle=False)
    for i in range(100):
        class_id = i % cfg.num_classes
        seed = derive_seed(11, "order", i)
        img = synth_sample(cfg, class_id, seed).magnitude
        clean = synth_sample(clean_cfg, class_id, seed).magnitude
        shadow = clean == cfg.shadow_level
        background = clean == cfg.background
        target = clean == cfg.target_level
        assert img[shadow].mean() < img[background].mean() < img[target].mean()


def test_synth_speckle_preserves_mean_within_20pct():
    cfg = SynthConfig()
    clean_cfg = SynthConfig(speckle=False)
    for i in range(100):
        seed = derive_seed(12, "mean", i)
        speckled = synth_sample(cfg, i % 3, seed).magnitude.mean()
        clean = synth_sample(clean_cfg, i % 3, seed).magnitude.mean()
        assert 0.8 * clean <= speckled <= 1.2 * clean


def test_synth_values_stay_in_unit_interval():
    cfg = SynthConfig()
    for i in range(20):
        img = synth_sample(cfg, i % 3, derive_seed(13, i)).magnitude
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_synth_dataset_histogram():
    ds = synth_dataset(SynthConfig(per_class_train=100, seed=3), "train")
    assert len(ds) == 300
    assert ds.histogram() == [100, 100, 100]


def test_synth_dataset_reproducible():
    a = synth_dataset(SynthConfig(seed=21), "train")
    b = synth_dataset(SynthConfig(seed=21), "train")
    assert all(np.array_equal(x.magnitude, y.magnitude)
               for x, y in zip(a.images, b.images))


def test_synth_train_test_disjoint():
    cfg = SynthConfig(per_class_train=20, per_class_test=20, seed=5)
    train = synth_dataset(cfg, "train")
    test = synth_dataset(cfg, "test")
    train_bytes = {img.magnitude.tobytes() for img in train.images}
    assert all(img.magnitude.tobytes() not in train_bytes for img in test.images)


def test_synth_manifest_format():
    cfg = SynthConfig(num_classes=2, per_class_test=3, seed=9)
    lines = synth_manifest(cfg, "test").splitlines()
    assert len(lines) == 6
    first = lines[0].split("\t")
    assert first[0] == "0" and first[1] == "0" and first[2] == "disk"
    assert len(first[3]) == 16  # hex stream seed
    int(first[3], 16)


def test_synth_class_id_validation():
    with pytest.raises(DatasetError, match="out of range"):
        synth_sample(SynthConfig(), 5, seed=1)


# ---------------------------------------------------------------------------
# directory loading


def test_write_and_load_synth_dir(tmp_path):
    cfg = SynthConfig(num_classes=3, per_class_test=4, seed=13)
    count = write_synth_dir(cfg, tmp_path / "d", split="test")
    assert count == 12
    assert (tmp_path / "d" / "manifest.tsv").is_file()
    ds = load_dataset(tmp_path / "d")
    assert len(ds) == 12
    assert ds.histogram() == [4, 4, 4]
    # pixel data survives the PGM quantization round trip
    direct = synth_dataset(cfg, "test")
    worst = max(np.abs(a.magnitude - b.magnitude).max()
                for a, b in zip(ds.images, direct.images))
    assert worst <= 0.5 / 255.0


def test_load_class_tree_with_phoenix(tmp_path):
    from attnatr.data import write_phoenix
    root = tmp_path / "mstar"
    for cls in ("bmp2", "t72"):
        d = root / "train" / cls
        d.mkdir(parents=True)
        for i in range(2):
            mag = np.random.default_rng(hash(cls) % 100 + i).uniform(size=(6, 6))
            (d / f"chip{i}.raw").write_bytes(write_phoenix(mag))
    ds = load_dataset(root, split="train", size=4)
    assert len(ds) == 4
    assert ds.class_names == ["bmp2", "t72"]
    assert all(img.magnitude.shape == (4, 4) for img in ds.images)


def test_load_empty_class_error(tmp_path):
    (tmp_path / "train" / "empty").mkdir(parents=True)
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(tmp_path, split="train")


def test_load_unreadable_file_error(tmp_path):
    d = tmp_path / "train" / "cls"
    d.mkdir(parents=True)
    (d / "bad.raw").write_bytes(b"not a phoenix file")
    with pytest.raises(DatasetError, match="bad.raw"):
        load_dataset(tmp_path, split="train")


def test_load_missing_directory_error(tmp_path):
    with pytest.raises(DatasetError, match="does not exist"):
        load_dataset(tmp_path / "nope")


# ---------------------------------------------------------------------------
# crop / pad helper


def test_center_crop_and_pad():
    img = np.arange(36, dtype=np.float64).reshape(6, 6)
    cropped = center_crop_or_pad(img, 4)
    assert cropped.shape == (4, 4)
    assert cropped[0, 0] == img[1, 1]
    padded = center_crop_or_pad(np.ones((2, 2)), 4)
    assert padded.shape == (4, 4)
    assert padded.sum() == 4.0
    assert padded[1, 1] == 1.0
