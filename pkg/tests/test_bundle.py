import numpy as np
import pytest

from rcodean.bundle import load_bundle, save_bundle
from rcodean.data import gen_synthetic, split_by_counts
from rcodean.errors import ConfigError, CorruptionError, FormatError, VersionError
from rcodean.pipeline import (PipelineConfig, evaluate, predict_batch,
                              preprocess, train_full)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    ds = gen_synthetic(110, 3, seed=3, splits=split_by_counts((60, 30, 20)))
    cfg = PipelineConfig(l=8, epochs=2, batch_size=32, head_epochs=30,
                         weight_steps=60, forest_trees=3, forest_depth=3,
                         svm_epochs=4, seed=1)
    bundle, _ = train_full(ds, cfg)
    path = tmp_path_factory.mktemp("bundle") / "model.rcbn"
    save_bundle(bundle, path)
    return ds, bundle, path


def test_round_trip_identical_predictions(trained):
    ds, bundle, path = trained
    loaded = load_bundle(path)
    rng = np.random.default_rng(5)
    probes = np.stack([preprocess(ds.image(i)).a for i in rng.integers(0, ds.n, 25)])
    bits_a, conf_a, _ = predict_batch(bundle, probes)
    bits_b, conf_b, _ = predict_batch(loaded, probes)
    assert np.array_equal(bits_a, bits_b)
    assert np.array_equal(conf_a, conf_b)


def test_round_trip_preserves_config_and_weights(trained):
    _, bundle, path = trained
    loaded = load_bundle(path)
    assert loaded.config == bundle.config
    assert np.array_equal(loaded.patch_weights.values, bundle.patch_weights.values)
    for a, b in zip(bundle.nets, loaded.nets):
        for (name_a, arr_a), (name_b, arr_b) in zip(a.parameters(), b.parameters()):
            assert name_a == name_b
            assert np.array_equal(arr_a, arr_b)
    assert np.array_equal(bundle.svm.weights, loaded.svm.weights)
    for ta, tb in zip(bundle.forest.trees[0], loaded.forest.trees[0]):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)


def test_flipped_payload_byte_is_detected(trained):
    _, _, path = trained
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x40
    bad = path.parent / "corrupt.rcbn"
    bad.write_bytes(bytes(data))
    with pytest.raises(CorruptionError, match="checksum"):
        load_bundle(bad)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.rcbn"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError, match="magic"):
        load_bundle(p)


def test_unknown_version_rejected(trained, tmp_path):
    _, _, path = trained
    data = bytearray(path.read_bytes())
    # the version lives in the JSON header; bump it and refresh the checksum
    import json
    import struct
    import zlib
    header_len = struct.unpack("<I", data[4:8])[0]
    header = json.loads(data[8:8 + header_len].decode())
    header["format_version"] = "999"
    new_header = json.dumps(header, sort_keys=True).encode()
    body = bytes(data[:4]) + struct.pack("<I", len(new_header)) + new_header \
        + bytes(data[8 + header_len:-4])
    p = tmp_path / "future.rcbn"
    p.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(VersionError, match="999"):
        load_bundle(p)


def test_config_guard_on_mismatched_dataset(trained):
    ds, _, path = trained
    loaded = load_bundle(path)
    other = gen_synthetic(30, 2, seed=9, splits=split_by_counts((10, 10, 10)))
    with pytest.raises(ConfigError, match="k="):
        evaluate(loaded, other, "test")
