import numpy as np
import pytest

import segkit


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def test_named_ids():
    assert len(segkit.named_topology_ids()) == 12
    assert segkit.ensemble_roster("E4") == ["UAD", "UMD", "UQD", "UDD"]
    assert len(segkit.ensemble_roster("E13")) == 13


def test_network_scores_are_normalised():
    net = segkit.Network("UMD", m=4, num_classes=5, seed=1)
    image = np.random.default_rng(0).normal(size=(32, 32, 2)).astype(np.float32)
    scores = net.predict(image)
    assert scores.shape == (32, 32, 5)
    np.testing.assert_allclose(scores.sum(axis=-1), 1.0, atol=1e-6)
    assert net.parameter_count() > 0


def test_labelling_agrees_with_numpy():
    scores = softmax(np.random.default_rng(1).normal(size=(8, 8, 4)))
    np.testing.assert_array_equal(segkit.label_map_map(scores), scores.argmax(axis=-1))
    np.testing.assert_array_equal(segkit.label_map_th(scores, [0.0, 0.0, 0.0]), scores.argmax(axis=-1))


def test_iou_against_numpy_tally():
    rng = np.random.default_rng(2)
    pred = rng.integers(0, 4, size=(16, 16)).astype(np.int32)
    truth = rng.integers(0, 4, size=(16, 16)).astype(np.int32)
    per_class = segkit.iou_per_class(pred, truth, 4)
    for c in range(4):
        inter = np.sum((pred == c) & (truth == c))
        union = np.sum((pred == c) | (truth == c))
        assert per_class[c] == pytest.approx(inter / union, abs=1e-12)


def test_patch_round_trip():
    image = np.random.default_rng(3).normal(size=(320, 320, 2)).astype(np.float32)
    patches = segkit.extract_patches(image)
    assert len(patches) == 4
    np.testing.assert_array_equal(segkit.reconstruct(patches, 320, 320), image)


def test_geometric_mean_example():
    a = np.array([[[0.9, 0.1]]], dtype=np.float32)
    b = np.array([[[0.5, 0.5]]], dtype=np.float32)
    np.testing.assert_allclose(segkit.average_geo([a, b])[0, 0], [0.75, 0.25], atol=1e-6)
    np.testing.assert_allclose(segkit.average_arith([a, b])[0, 0], [0.7, 0.3], atol=1e-6)


def test_wilcoxon_exact():
    r = segkit.wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0] * 6)
    assert r["exact"] and r["p_value"] == pytest.approx(0.03125, abs=1e-15)


def test_file_round_trips(tmp_path):
    t = np.random.default_rng(4).normal(size=(5, 7, 3)).astype(np.float32)
    segkit.tsr_write(t, tmp_path / "t.tsr")
    np.testing.assert_array_equal(segkit.tsr_read(tmp_path / "t.tsr"), t)
    assert (tmp_path / "t.tsr").stat().st_size == 17 + 4 * t.size
    labels = np.random.default_rng(5).integers(0, 12, size=(6, 9)).astype(np.int32)
    segkit.pgm_write(labels, tmp_path / "m.pgm", 12)
    np.testing.assert_array_equal(segkit.pgm_read(tmp_path / "m.pgm", 12), labels)
    (tmp_path / "bad.tsr").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        segkit.tsr_read(tmp_path / "bad.tsr")


def test_short_training_and_weights(tmp_path):
    data = segkit.synthetic_dataset(4, 16, 16, 3, seed=7)
    images = [d[0] for d in data]
    masks = [d[1] for d in data]
    net = segkit.train("UD", 4, images, masks, epochs=2, batch_size=2, seed=1)
    net.save(tmp_path / "ud.weights")
    back = segkit.Network.load(tmp_path / "ud.weights")
    assert back.id == "UD"
    np.testing.assert_array_equal(back.predict(images[0]), net.predict(images[0]))


def test_verification_suites():
    assert segkit.gradient_suite()["passed"]
    shapes = segkit.shape_suite(size=32, m=4, num_classes=5)
    assert len(shapes) == 12 and all(v[0] for v in shapes.values())
