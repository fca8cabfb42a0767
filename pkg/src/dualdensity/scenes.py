"""Synthetic aerial-style scenes with tiny objects and density extremes.

Scenes alternate between a sparse regime (a handful of objects placed
uniformly) and a dense regime (tens to hundreds of objects pulled toward
a few cluster centers), matching the count variation the density head
must cope with. Object sizes follow a clipped normal centered on tiny
scales. Every image is a pure function of (master seed, image index).
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

OBJECT_CLASS = "object"
COARSE_GRID = 8
DENSE_THRESHOLD = 30  # object count at or above this marks the dense regime


@dataclass
class SceneAnnotation:
    image_id: int
    width: int
    height: int
    objects: list

    def to_record(self):
        return {
            "id": self.image_id,
            "width": self.width,
            "height": self.height,
            "objects": self.objects,
        }


@dataclass(frozen=True)
class SceneGenConfig:
    image_size: tuple = (128, 128)  # (H, W)
    size_mean: float = 12.7
    size_std: float = 5.6
    size_min: float = 3.0
    size_max: float = 32.0
    sparse_count: tuple = (1, 10)
    dense_count: tuple = (30, 120)
    cluster_count: tuple = (1, 4)
    cluster_spread: float = 12.0
    master_seed: int = 0

    def __post_init__(self):
        h, w = self.image_size
        if h < 2 * COARSE_GRID or w < 2 * COARSE_GRID:
            raise ValueError(f"image size {h}x{w} too small for background grid")
        for name in ("sparse_count", "dense_count", "cluster_count"):
            lo, hi = getattr(self, name)
            if not (1 <= lo <= hi):
                raise ValueError(f"{name} range ({lo}, {hi}) invalid")


def _clipped_sizes(rng, n, cfg):
    raw = rng.normal(cfg.size_mean, cfg.size_std, n)
    return np.clip(raw, cfg.size_min, cfg.size_max)


def _sparse_centers(rng, n, h, w):
    xs = rng.uniform(0.0, w, n)
    ys = rng.uniform(0.0, h, n)
    return xs, ys


def _dense_centers(rng, n, h, w, cfg):
    lo, hi = cfg.cluster_count
    n_clusters = int(rng.integers(lo, hi + 1))
    margin = min(16.0, w / 4.0, h / 4.0)
    cx = rng.uniform(margin, w - margin, n_clusters)
    cy = rng.uniform(margin, h - margin, n_clusters)
    which = rng.integers(0, n_clusters, n)
    xs = cx[which] + rng.normal(0.0, cfg.cluster_spread, n)
    ys = cy[which] + rng.normal(0.0, cfg.cluster_spread, n)
    # keep centers strictly inside the image
    xs = np.clip(xs, 0.0, np.nextafter(w, 0.0))
    ys = np.clip(ys, 0.0, np.nextafter(h, 0.0))
    return xs, ys


def _background(rng, h, w):
    ch, cw = -(-h // COARSE_GRID), -(-w // COARSE_GRID)
    coarse = rng.uniform(0.3, 0.7, (COARSE_GRID, COARSE_GRID))
    big = np.repeat(np.repeat(coarse, ch, axis=0), cw, axis=1)[:h, :w]
    tint = rng.uniform(-0.05, 0.05, (3, 1, 1))
    fine = rng.normal(0.0, 0.02, (3, h, w))
    return big[None] + tint + fine


def _render_blob(img, cx, cy, bw, bh, amplitude, gains):
    h, w = img.shape[1:]
    sx = max(bw / 4.0, 0.6)
    sy = max(bh / 4.0, 0.6)
    x0 = max(0, int(np.floor(cx - 3 * sx)))
    x1 = min(w - 1, int(np.ceil(cx + 3 * sx)))
    y0 = max(0, int(np.floor(cy - 3 * sy)))
    y1 = min(h - 1, int(np.ceil(cy + 3 * sy)))
    xs = np.arange(x0, x1 + 1) + 0.5
    ys = np.arange(y0, y1 + 1) + 0.5
    fall = np.exp(-(((ys[:, None] - cy) / sy) ** 2
                    + ((xs[None, :] - cx) / sx) ** 2) / 2.0)
    img[:, y0:y1 + 1, x0:x1 + 1] += amplitude * gains[:, None, None] * fall


def generate_scene(config, index):
    """Render image [3, H, W] float32 in [0, 1] plus its annotation.

    Even indices draw the sparse regime, odd indices the dense regime, so
    any contiguous index range carries both. Fully determined by
    (master seed, index).
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, index]))
    h, w = config.image_size
    img = _background(rng, h, w)
    if index % 2 == 0:
        lo, hi = config.sparse_count
        n = int(rng.integers(lo, hi + 1))
        xs, ys = _sparse_centers(rng, n, h, w)
    else:
        lo, hi = config.dense_count
        n = int(rng.integers(lo, hi + 1))
        xs, ys = _dense_centers(rng, n, h, w, config)
    ws = _clipped_sizes(rng, n, config)
    hs = _clipped_sizes(rng, n, config)
    objects = []
    for i in range(n):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        amplitude = sign * rng.uniform(0.3, 0.6)
        gains = rng.uniform(0.8, 1.2, 3)
        _render_blob(img, xs[i], ys[i], ws[i], hs[i], amplitude, gains)
        objects.append({
            "cx": float(xs[i]),
            "cy": float(ys[i]),
            "w": float(ws[i]),
            "h": float(hs[i]),
            "class": OBJECT_CLASS,
        })
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return img, SceneAnnotation(index, w, h, objects)


def config_hash(config):
    """Stable hash of the generator configuration."""
    blob = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


def _annotation_payload(annotations):
    return {"images": [a.to_record() for a in annotations]}


def _split_paths(out_dir, split):
    return (
        os.path.join(out_dir, f"{split}_images.f32"),
        os.path.join(out_dir, f"{split}_images.json"),
        os.path.join(out_dir, f"{split}_annotations.json"),
    )


def _write_split(out_dir, split, images, annotations, image_size):
    bin_path, sidecar_path, ann_path = _split_paths(out_dir, split)
    if images:
        stack = np.stack(images).astype("<f4")
    else:
        stack = np.zeros((0, 3) + tuple(image_size), dtype="<f4")
    stack.tofile(bin_path)
    n, c, h, w = stack.shape
    sidecar = {"n": n, "channels": c, "height": h, "width": w,
               "dtype": "<f4", "order": "nchw"}
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    with open(ann_path, "w") as fh:
        json.dump(_annotation_payload(annotations), fh, indent=2)
        fh.write("\n")
    return bin_path, sidecar_path, ann_path


def _regime_counts(annotations):
    sparse = [len(a.objects) for a in annotations
              if len(a.objects) < DENSE_THRESHOLD]
    dense = [len(a.objects) for a in annotations
             if len(a.objects) >= DENSE_THRESHOLD]
    return {
        "n_sparse_images": len(sparse),
        "n_dense_images": len(dense),
        "sparse_mean_count": float(np.mean(sparse)) if sparse else 0.0,
        "dense_mean_count": float(np.mean(dense)) if dense else 0.0,
    }


def generate_split(config, start, count):
    """Scenes for indices [start, start + count)."""
    images, annotations = [], []
    for index in range(start, start + count):
        img, ann = generate_scene(config, index)
        images.append(img)
        annotations.append(ann)
    return images, annotations


def write_dataset(config, n_train, n_val, out_dir):
    """Write packed images + annotation JSON per split, return manifest.

    Train covers indices [0, n_train); val covers [n_train, n_train+n_val),
    so the splits never overlap for a fixed master seed.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "seed": config.master_seed,
        "image_size": list(config.image_size),
        "config_hash": config_hash(config),
        "splits": {},
    }
    for split, start, count in (("train", 0, n_train),
                                ("val", n_train, n_val)):
        images, annotations = generate_split(config, start, count)
        bin_path, sidecar_path, ann_path = _write_split(
            out_dir, split, images, annotations, config.image_size)
        entry = {
            "n_images": count,
            "first_index": start,
            "n_objects": int(sum(len(a.objects) for a in annotations)),
            "images": os.path.basename(bin_path),
            "images_meta": os.path.basename(sidecar_path),
            "annotations": os.path.basename(ann_path),
        }
        entry.update(_regime_counts(annotations))
        manifest["splits"][split] = entry
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def _require(cond, image_id, message):
    if not cond:
        raise ValueError(f"image {image_id}: {message}")


def load_annotations(path):
    """Parse and validate an annotation file; returns SceneAnnotation list.

    Violations report the offending image id and field.
    """
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(payload, dict) or "images" not in payload:
        raise ValueError(f"{path}: missing top-level 'images' list")
    annotations = []
    for record in payload["images"]:
        image_id = record.get("id")
        for key in ("id", "width", "height", "objects"):
            _require(key in record, image_id, f"missing field '{key}'")
        width = record["width"]
        height = record["height"]
        _require(width > 0 and height > 0, image_id,
                 f"non-positive image size {width}x{height}")
        for obj in record["objects"]:
            for key in ("cx", "cy", "w", "h", "class"):
                _require(key in obj, image_id, f"object missing field '{key}'")
            _require(0.0 <= obj["cx"] < width, image_id,
                     f"cx {obj['cx']} outside [0, {width})")
            _require(0.0 <= obj["cy"] < height, image_id,
                     f"cy {obj['cy']} outside [0, {height})")
            _require(obj["w"] > 0 and obj["h"] > 0, image_id,
                     f"non-positive object size {obj['w']}x{obj['h']}")
        annotations.append(SceneAnnotation(
            image_id, width, height, list(record["objects"])))
    return annotations


def load_split(out_dir, split):
    """Read one packed split back as (images [n,3,H,W] float32, annotations)."""
    bin_path, sidecar_path, ann_path = _split_paths(out_dir, split)
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    shape = (meta["n"], meta["channels"], meta["height"], meta["width"])
    images = np.fromfile(bin_path, dtype=meta["dtype"]).reshape(shape)
    return images, load_annotations(ann_path)
