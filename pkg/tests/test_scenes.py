"""Scene generator: determinism, regimes, size statistics, dataset IO."""

import json

import numpy as np
import numpy.testing as npt
import pytest

from dualdensity.scenes import (
    SceneGenConfig,
    config_hash,
    generate_scene,
    load_annotations,
    load_split,
    write_dataset,
)

CFG = SceneGenConfig(master_seed=11)


# --------------------------------------------------------- generate_scene


def test_scene_bitwise_deterministic():
    img_a, ann_a = generate_scene(CFG, 9)
    img_b, ann_b = generate_scene(CFG, 9)
    npt.assert_array_equal(img_a, img_b)
    assert ann_a == ann_b


def test_scene_index_changes_content():
    img_a, _ = generate_scene(CFG, 0)
    img_b, _ = generate_scene(CFG, 2)
    assert not np.array_equal(img_a, img_b)


def test_scene_seed_changes_content():
    img_a, _ = generate_scene(SceneGenConfig(master_seed=1), 4)
    img_b, _ = generate_scene(SceneGenConfig(master_seed=2), 4)
    assert not np.array_equal(img_a, img_b)


def test_scene_image_contract():
    img, ann = generate_scene(CFG, 3)
    assert img.shape == (3, 128, 128)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert ann.width == 128 and ann.height == 128 and ann.image_id == 3


def test_scene_regime_count_ranges():
    for idx in range(0, 40, 2):
        _, ann = generate_scene(CFG, idx)
        assert 1 <= len(ann.objects) <= 10
    for idx in range(1, 41, 2):
        _, ann = generate_scene(CFG, idx)
        assert 30 <= len(ann.objects) <= 120


def test_scene_centers_and_sizes_in_bounds():
    for idx in range(20):
        _, ann = generate_scene(CFG, idx)
        for obj in ann.objects:
            assert 0.0 <= obj["cx"] < 128.0
            assert 0.0 <= obj["cy"] < 128.0
            assert 3.0 <= obj["w"] <= 32.0
            assert 3.0 <= obj["h"] <= 32.0
            assert obj["class"] == "object"


def test_scene_mean_size_matches_clipped_normal():
    sizes = []
    idx = 0
    while len(sizes) < 10000:
        _, ann = generate_scene(CFG, idx)
        for obj in ann.objects:
            sizes += [obj["w"], obj["h"]]
        idx += 1
    mean = float(np.mean(sizes))
    assert abs(mean - 12.7) <= 0.3
    # cross-check against a direct clipped-normal draw
    ref = np.clip(np.random.default_rng(123).normal(12.7, 5.6, 100000), 3, 32)
    assert abs(mean - ref.mean()) <= 0.2


def test_scene_rejects_tiny_canvas():
    with pytest.raises(ValueError, match="too small"):
        SceneGenConfig(image_size=(8, 8))


def test_scene_nondefault_canvas():
    img, ann = generate_scene(SceneGenConfig(image_size=(64, 96)), 1)
    assert img.shape == (3, 64, 96)
    assert all(0 <= o["cx"] < 96 and 0 <= o["cy"] < 64 for o in ann.objects)


# ---------------------------------------------------------- write_dataset


def test_dataset_manifest_counts_and_round_trip(tmp_path):
    manifest = write_dataset(CFG, 6, 4, str(tmp_path))
    assert manifest["splits"]["train"]["n_images"] == 6
    assert manifest["splits"]["val"]["n_images"] == 4
    assert manifest["config_hash"] == config_hash(CFG)

    images, annotations = load_split(str(tmp_path), "train")
    assert images.shape == (6, 3, 128, 128)
    for offset, ann in enumerate(annotations):
        img_ref, ann_ref = generate_scene(CFG, offset)
        npt.assert_array_equal(images[offset], img_ref)
        assert ann.objects == ann_ref.objects

    # val split continues the index sequence past train
    _, val_annotations = load_split(str(tmp_path), "val")
    _, ann_ref = generate_scene(CFG, 6)
    assert val_annotations[0].objects == ann_ref.objects


def test_dataset_regeneration_byte_identical(tmp_path):
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    write_dataset(CFG, 3, 2, str(dir_a))
    write_dataset(CFG, 3, 2, str(dir_b))
    for name in ("train_annotations.json", "val_annotations.json",
                 "train_images.f32", "manifest.json"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()


def test_dataset_regime_separation_in_manifest(tmp_path):
    manifest = write_dataset(CFG, 40, 0, str(tmp_path))
    entry = manifest["splits"]["train"]
    assert entry["n_sparse_images"] == 20
    assert entry["n_dense_images"] == 20
    assert entry["dense_mean_count"] >= 5.0 * entry["sparse_mean_count"]


def test_dataset_annotation_schema_is_exact(tmp_path):
    write_dataset(CFG, 1, 0, str(tmp_path))
    payload = json.loads((tmp_path / "train_annotations.json").read_text())
    assert set(payload.keys()) == {"images"}
    record = payload["images"][0]
    assert set(record.keys()) == {"id", "width", "height", "objects"}
    for obj in record["objects"]:
        assert set(obj.keys()) == {"cx", "cy", "w", "h", "class"}


def test_dataset_centers_round_trip_exactly(tmp_path):
    write_dataset(CFG, 2, 0, str(tmp_path))
    loaded = load_annotations(str(tmp_path / "train_annotations.json"))
    for offset, ann in enumerate(loaded):
        _, ann_ref = generate_scene(CFG, offset)
        for got, ref in zip(ann.objects, ann_ref.objects):
            assert got["cx"] == ref["cx"] and got["cy"] == ref["cy"]
            assert got["w"] == ref["w"] and got["h"] == ref["h"]


def test_dataset_empty_val_split(tmp_path):
    manifest = write_dataset(CFG, 2, 0, str(tmp_path))
    assert manifest["splits"]["val"]["n_images"] == 0
    images, annotations = load_split(str(tmp_path), "val")
    assert images.shape[0] == 0 and annotations == []


# ------------------------------------------------------- load_annotations


def _write_payload(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def test_load_rejects_center_on_right_edge(tmp_path):
    payload = {"images": [{"id": 42, "width": 64, "height": 64, "objects": [
        {"cx": 64.0, "cy": 10.0, "w": 4.0, "h": 4.0, "class": "object"}]}]}
    with pytest.raises(ValueError, match="image 42"):
        load_annotations(_write_payload(tmp_path / "a.json", payload))


def test_load_rejects_non_positive_size(tmp_path):
    payload = {"images": [{"id": 7, "width": 64, "height": 64, "objects": [
        {"cx": 5.0, "cy": 5.0, "w": 0.0, "h": 4.0, "class": "object"}]}]}
    with pytest.raises(ValueError, match="image 7.*size"):
        load_annotations(_write_payload(tmp_path / "b.json", payload))


def test_load_rejects_missing_field(tmp_path):
    payload = {"images": [{"id": 1, "width": 64, "height": 64, "objects": [
        {"cx": 5.0, "cy": 5.0, "w": 4.0, "class": "object"}]}]}
    with pytest.raises(ValueError, match="image 1.*'h'"):
        load_annotations(_write_payload(tmp_path / "c.json", payload))


def test_load_rejects_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ValueError, match="malformed"):
        load_annotations(str(path))


def test_load_accepts_empty_object_list(tmp_path):
    payload = {"images": [{"id": 0, "width": 32, "height": 32, "objects": []}]}
    (anns,) = load_annotations(_write_payload(tmp_path / "d.json", payload))
    assert anns.objects == []
