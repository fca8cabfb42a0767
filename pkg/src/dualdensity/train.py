"""Training and evaluation driver for the density extractor.

Datasets are regenerated in memory from the experiment seed, so a config
fully determines every artifact: loss curves, checkpoints, and metric
reports are byte-reproducible across reruns.
"""

import json
import math
import os
import time

import numpy as np

from .density import (
    anchor_recall,
    density_metrics,
    make_gt_density,
    recall_focal_loss,
    seed_queries,
    uniform_grid_anchors,
)
from .model import build_model
from .optim import Adam, cosine_lr
from .scenes import DENSE_THRESHOLD, SceneGenConfig, generate_split

CHECKPOINT_DTYPE = "<f4"


class Dataset:
    """Images, annotations, and rasterized target maps for one split."""

    def __init__(self, images, annotations, targets):
        self.images = images
        self.annotations = annotations
        self.targets = targets

    def __len__(self):
        return self.images.shape[0]

    @classmethod
    def from_config(cls, config, start, count):
        scene_cfg = SceneGenConfig(image_size=config.image_size,
                                   master_seed=config.seed)
        images, annotations = generate_split(scene_cfg, start, count)
        h, w = config.image_size
        if images:
            stack = np.stack(images)
        else:
            stack = np.zeros((0, 3, h, w), dtype=np.float32)
        targets = np.zeros((count, 1, h // 2, w // 2), dtype=np.float32)
        for i, ann in enumerate(annotations):
            targets[i, 0] = make_gt_density(ann, config.image_size,
                                            dtype=np.float32)
        return cls(stack, annotations, targets)


def build_datasets(config):
    """Train split uses scene indices [0, n_train); val continues after."""
    train = Dataset.from_config(config, 0, config.n_train)
    val = Dataset.from_config(config, config.n_train, config.n_val)
    return train, val


def save_checkpoint(model, base_path, meta=None):
    """Concatenated little-endian float32 values + JSON layout manifest."""
    layout = []
    chunks = []
    offset = 0
    for name, p in model.named_params():
        flat = np.ascontiguousarray(p.value, dtype=CHECKPOINT_DTYPE).reshape(-1)
        layout.append({"name": name, "shape": list(p.value.shape),
                       "offset": offset})
        chunks.append(flat)
        offset += flat.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, CHECKPOINT_DTYPE)
    blob.tofile(base_path + ".bin")
    manifest = {"dtype": CHECKPOINT_DTYPE, "total": offset, "layout": layout}
    if meta:
        manifest["meta"] = meta
    with open(base_path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return base_path


def load_checkpoint(model, base_path):
    """Restore parameters in place; layout must match the model exactly."""
    with open(base_path + ".json") as fh:
        manifest = json.load(fh)
    expected = [(e["name"], tuple(e["shape"])) for e in manifest["layout"]]
    found = [(n, tuple(p.shape)) for n, p in model.named_params()]
    if expected != found:
        diffs = [f"  checkpoint has {e}, model has {f}"
                 for e, f in zip(expected, found) if e != f]
        if len(expected) != len(found):
            diffs.append(f"  checkpoint lists {len(expected)} tensors, "
                         f"model has {len(found)}")
        raise ValueError("checkpoint layout mismatch:\n" + "\n".join(diffs[:8]))
    data = np.fromfile(base_path + ".bin", dtype=manifest["dtype"])
    if data.size != manifest["total"]:
        raise ValueError(
            f"checkpoint data has {data.size} values, manifest expects "
            f"{manifest['total']}"
        )
    for entry, (_, p) in zip(manifest["layout"], model.named_params()):
        size = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        chunk = data[entry["offset"]:entry["offset"] + size]
        p.value = chunk.reshape(entry["shape"]).astype(p.value.dtype)
    return manifest.get("meta", {})


def _batches(n, batch_size, order=None):
    idx = np.arange(n) if order is None else order
    for lo in range(0, n, batch_size):
        yield idx[lo:lo + batch_size]


def _split_loss(model, dataset, batch_size, loss_cfg):
    """Mean loss over a split in eval mode."""
    total = 0.0
    for idx in _batches(len(dataset), batch_size):
        pred = model.forward(dataset.images[idx], train=False)
        loss, _ = recall_focal_loss(pred, dataset.targets[idx], loss_cfg)
        total += loss * len(idx)
    return total / max(len(dataset), 1)


def evaluate_model(model, dataset, config):
    """Aggregate density metrics plus the anchor-seeding comparison.

    Density-seeded anchors and a uniform grid at the same budget are both
    scored on every image; dense-regime images are also aggregated
    separately (that is where seeding should pay off).
    """
    sums = {"mae": 0.0, "count_error": 0.0,
            "peak_recall": 0.0, "peak_precision": 0.0}
    seeded_all, uniform_all = [], []
    seeded_dense, uniform_dense = [], []
    grid = uniform_grid_anchors(config.image_size, config.queries.k)
    pos = 0
    for idx in _batches(len(dataset), config.batch_size):
        pred = model.forward(dataset.images[idx], train=False)
        for row in range(pred.shape[0]):
            ann = dataset.annotations[pos]
            pred2d = pred[row, 0]
            report = density_metrics(
                pred2d, dataset.targets[pos, 0], ann.objects,
                match_radius=config.queries.match_radius)
            for key in sums:
                sums[key] += report[key]
            anchors = seed_queries(pred2d, config.queries)
            rs = anchor_recall(anchors, ann, config.queries.match_radius)
            ru = anchor_recall(grid, ann, config.queries.match_radius)
            seeded_all.append(rs)
            uniform_all.append(ru)
            if len(ann.objects) >= DENSE_THRESHOLD:
                seeded_dense.append(rs)
                uniform_dense.append(ru)
            pos += 1
    n = max(pos, 1)
    out = {key: sums[key] / n for key in sums}
    out["n_images"] = pos
    out["seeded_recall"] = float(np.mean(seeded_all)) if seeded_all else None
    out["uniform_recall"] = float(np.mean(uniform_all)) if uniform_all else None
    out["seeded_recall_dense"] = (
        float(np.mean(seeded_dense)) if seeded_dense else None)
    out["uniform_recall_dense"] = (
        float(np.mean(uniform_dense)) if uniform_dense else None)
    return out


def train(config, out_dir, *, data=None, log=None):
    """Optimize the extractor on the configured synthetic benchmark.

    Writes config.json, loss.csv, checkpoint.{bin,json}, report.json to
    out_dir and returns the report dict. A non-finite loss aborts with
    the offending epoch/batch; the last finished epoch's checkpoint stays
    on disk.
    """
    say = log if log is not None else (lambda msg: None)
    t0 = time.time()
    os.makedirs(out_dir, exist_ok=True)
    config.save(os.path.join(out_dir, "config.json"))
    train_ds, val_ds = build_datasets(config) if data is None else data

    model = build_model(config.width, config.family, config.seed)
    opt = Adam(model.params(trainable_only=True), lr=config.lr)
    n_batches = math.ceil(len(train_ds) / config.batch_size)
    total_steps = config.epochs * n_batches

    ckpt_base = os.path.join(out_dir, "checkpoint")
    save_checkpoint(model, ckpt_base, meta=_checkpoint_meta(config, epoch=0))

    rows = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, 2, epoch])).permutation(
                len(train_ds))
        epoch_loss = 0.0
        lr = config.lr
        for b, idx in enumerate(_batches(len(train_ds), config.batch_size,
                                         order)):
            model.zero_grad()
            pred = model.forward(train_ds.images[idx], train=True)
            loss, dpred = recall_focal_loss(pred, train_ds.targets[idx],
                                            config.loss)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch} batch {b + 1}; "
                    f"last-good checkpoint retained at {ckpt_base}"
                )
            model.backward(dpred)
            lr = cosine_lr(step, total_steps, config.lr, config.lr_final)
            opt.step(lr)
            step += 1
            epoch_loss += loss * len(idx)
        train_loss = epoch_loss / len(train_ds)
        val_loss = _split_loss(model, val_ds, config.batch_size, config.loss) \
            if len(val_ds) else None
        rows.append((epoch, train_loss, val_loss, lr))
        save_checkpoint(model, ckpt_base,
                        meta=_checkpoint_meta(config, epoch=epoch))
        val_text = "-" if val_loss is None else f"{val_loss:.6f}"
        say(f"epoch {epoch:3d}/{config.epochs}  train {train_loss:.6f}  "
            f"val {val_text}  lr {lr:.2e}")

    _write_loss_csv(os.path.join(out_dir, "loss.csv"), rows)

    # score the shipped artifact: reload the float32 checkpoint so the
    # reported metrics match a later `evaluate` of it bit for bit
    load_checkpoint(model, ckpt_base)
    report = {
        "config_digest": config.digest(),
        "family": config.family,
        "width": config.width,
        "epochs": config.epochs,
        "n_train": len(train_ds),
        "n_val": len(val_ds),
        "train_loss": [r[1] for r in rows],
        "val_loss": [r[2] for r in rows],
        "final_train_loss": rows[-1][1] if rows else None,
        "final_val_loss": rows[-1][2] if rows else None,
        "train_metrics": evaluate_model(model, train_ds, config),
        "val_metrics": (evaluate_model(model, val_ds, config)
                        if len(val_ds) else None),
        "checkpoint": os.path.basename(ckpt_base),
        "wall_clock_s": round(time.time() - t0, 3),
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report


def _checkpoint_meta(config, *, epoch):
    return {"width": config.width, "family": config.family,
            "seed": config.seed, "epoch": epoch}


def _write_loss_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for epoch, train_loss, val_loss, lr in rows:
            val_text = "" if val_loss is None else repr(val_loss)
            fh.write(f"{epoch},{train_loss!r},{val_text},{lr!r}\n")


def evaluate(checkpoint_base, split, config):
    """Score a saved checkpoint on a regenerated split ('train' or 'val')."""
    if split == "train":
        dataset = Dataset.from_config(config, 0, config.n_train)
    elif split == "val":
        dataset = Dataset.from_config(config, config.n_train, config.n_val)
    else:
        raise ValueError(f"split must be 'train' or 'val', got {split!r}")
    model = build_model(config.width, config.family, config.seed)
    load_checkpoint(model, checkpoint_base)
    metrics = evaluate_model(model, dataset, config)
    metrics["split"] = split
    metrics["loss"] = _split_loss(model, dataset, config.batch_size,
                                  config.loss)
    metrics["config_digest"] = config.digest()
    return metrics
