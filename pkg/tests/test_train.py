"""Training loop, optimizer, checkpoints: determinism and round trips."""

import json
import math
import os

import numpy as np
import numpy.testing as npt
import pytest

from dualdensity.config import ExperimentConfig
from dualdensity.model import build_model
from dualdensity.nn import Param
from dualdensity.optim import Adam, cosine_lr
from dualdensity.train import (
    Dataset,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

# small enough for sub-second epochs, big enough to exercise batching
TINY = ExperimentConfig(seed=3, width=8, epochs=2, batch_size=4,
                        n_train=6, n_val=3)


# ----------------------------------------------------------------- config


def test_config_json_round_trip(tmp_path):
    cfg = TINY.replace(family="haar", lr=5e-4)
    path = tmp_path / "config.json"
    cfg.save(path)
    loaded = ExperimentConfig.load(path)
    assert loaded == cfg
    assert loaded.digest() == cfg.digest()


def test_config_digest_tracks_every_field():
    assert TINY.digest() != TINY.replace(seed=4).digest()
    assert TINY.digest() != TINY.replace(family="none").digest()
    assert TINY.replace(seed=3) == TINY


def test_config_rejects_invalid_values():
    with pytest.raises(ValueError, match="family"):
        TINY.replace(family="wavelet")
    with pytest.raises(ValueError, match="width"):
        TINY.replace(width=12)
    with pytest.raises(ValueError, match="lr"):
        TINY.replace(lr_final=1.0)
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"seed": 0, "widht": 8})


def test_config_nested_sections_round_trip():
    data = TINY.to_dict()
    assert isinstance(data["loss"], dict)
    rebuilt = ExperimentConfig.from_dict(data)
    assert rebuilt.loss == TINY.loss
    assert rebuilt.queries == TINY.queries


# -------------------------------------------------------------- optimizer


def _reference_adam(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar reference: returns cumulative displacement after the grads."""
    m = v = 0.0
    x = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return x


def test_adam_matches_scalar_reference():
    grads = [0.3, -0.7, 1.2, 0.05]
    param = Param(np.zeros(1))
    opt = Adam([param], lr=1e-2)
    for g in grads:
        param.grad = np.array([g])
        opt.step()
    expected = _reference_adam(grads, 1e-2)
    npt.assert_allclose(param.value[0], expected, rtol=1e-12)


def test_adam_skips_missing_grads_and_rejects_empty():
    param = Param(np.ones(2))
    opt = Adam([param], lr=0.1)
    param.grad = None
    opt.step()
    npt.assert_array_equal(param.value, np.ones(2))
    frozen = Param(np.ones(1), requires_grad=False)
    with pytest.raises(ValueError):
        Adam([frozen], lr=0.1)


def test_cosine_schedule_endpoints_and_midpoint():
    assert cosine_lr(0, 11, 1e-3, 1e-5) == 1e-3
    assert cosine_lr(10, 11, 1e-3, 1e-5) == 1e-5
    mid = cosine_lr(5, 11, 1e-3, 1e-5)
    npt.assert_allclose(mid, (1e-3 + 1e-5) / 2, rtol=1e-12)
    assert cosine_lr(0, 1, 1e-3, 1e-5) == 1e-3  # degenerate single step


def test_cosine_schedule_monotone_decreasing():
    values = [cosine_lr(s, 40, 1e-3, 1e-5) for s in range(40)]
    assert all(a > b for a, b in zip(values, values[1:]))


# ------------------------------------------------------------ checkpoints


def test_checkpoint_round_trip(tmp_path):
    model = build_model(8, "gabor", seed=0)
    base = str(tmp_path / "ckpt")
    save_checkpoint(model, base, meta={"epoch": 7})
    # float32 on disk: the restored values are the f32-rounded originals
    expected = [p.value.astype(np.float32).astype(np.float64)
                for p in model.params()]
    for p in model.params(trainable_only=True):
        p.value += 1.0
    meta = load_checkpoint(model, base)
    assert meta == {"epoch": 7}
    for p, want in zip(model.params(), expected):
        npt.assert_array_equal(p.value, want)


def test_checkpoint_layout_mismatch_is_diagnosed(tmp_path):
    base = str(tmp_path / "ckpt")
    save_checkpoint(build_model(8, "gabor", seed=0), base)
    other = build_model(16, "gabor", seed=0)
    with pytest.raises(ValueError, match="layout mismatch") as err:
        load_checkpoint(other, base)
    # the message names mismatching tensors with both shapes
    assert "(8, 32, 3, 3)" in str(err.value)
    assert "(16, 32, 3, 3)" in str(err.value)


# --------------------------------------------------------------- training


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = train(TINY, str(out))
    return out, report


def test_train_writes_all_artifacts(tiny_run):
    out, report = tiny_run
    for name in ("config.json", "loss.csv", "checkpoint.bin",
                 "checkpoint.json", "report.json"):
        assert (out / name).exists()
    with open(out / "report.json") as fh:
        assert json.load(fh) == report


def test_train_is_deterministic(tiny_run, tmp_path):
    out, report = tiny_run
    repeat = train(TINY, str(tmp_path))
    assert (tmp_path / "loss.csv").read_bytes() == \
        (out / "loss.csv").read_bytes()
    assert (tmp_path / "checkpoint.bin").read_bytes() == \
        (out / "checkpoint.bin").read_bytes()
    assert repeat["train_loss"] == report["train_loss"]
    assert repeat["val_metrics"] == report["val_metrics"]


def test_train_report_schema(tiny_run):
    _, report = tiny_run
    assert len(report["train_loss"]) == TINY.epochs
    assert len(report["val_loss"]) == TINY.epochs
    assert report["final_train_loss"] == report["train_loss"][-1]
    assert all(math.isfinite(v) for v in report["train_loss"])
    assert report["config_digest"] == TINY.digest()
    assert report["train_metrics"]["n_images"] == TINY.n_train


def test_loss_csv_has_one_row_per_epoch(tiny_run):
    out, _ = tiny_run
    lines = (out / "loss.csv").read_text().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert len(lines) == 1 + TINY.epochs


def test_training_decreases_loss(tiny_run):
    # two epochs on six images is still enough for a strict improvement
    _, report = tiny_run
    assert report["train_loss"][-1] < report["train_loss"][0]


def test_evaluate_reproduces_final_train_metrics(tiny_run):
    out, report = tiny_run
    scored = evaluate(str(out / "checkpoint"), "train", TINY)
    for key, want in report["train_metrics"].items():
        got = scored[key]
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-6), key


def test_evaluate_round_trips_through_json(tiny_run):
    out, _ = tiny_run
    scored = evaluate(str(out / "checkpoint"), "val", TINY)
    assert json.loads(json.dumps(scored)) == scored
    assert scored["split"] == "val"
    with pytest.raises(ValueError, match="split"):
        evaluate(str(out / "checkpoint"), "test", TINY)


def test_epochs_zero_is_a_valid_degenerate_run(tmp_path):
    cfg = TINY.replace(epochs=0)
    report = train(cfg, str(tmp_path))
    assert report["train_loss"] == []
    assert report["final_train_loss"] is None
    assert (tmp_path / "checkpoint.bin").exists()
    assert report["train_metrics"]["n_images"] == cfg.n_train


def test_no_val_split_reports_none(tmp_path):
    cfg = TINY.replace(n_val=0, epochs=1)
    report = train(cfg, str(tmp_path))
    assert report["val_loss"] == [None]
    assert report["final_val_loss"] is None
    assert report["val_metrics"] is None
    lines = (tmp_path / "loss.csv").read_text().strip().split("\n")
    assert lines[1].split(",")[2] == ""  # empty val field, still 4 columns


def test_non_finite_loss_aborts_with_location(tmp_path):
    train_ds, val_ds = Dataset.from_config(TINY, 0, TINY.n_train), \
        Dataset.from_config(TINY, TINY.n_train, TINY.n_val)
    train_ds.targets[2, 0, 0, 0] = np.nan  # poison one target
    with pytest.raises(RuntimeError, match=r"epoch 1 batch \d+") as err:
        train(TINY, str(tmp_path), data=(train_ds, val_ds))
    assert "checkpoint" in str(err.value)
    # the init-state checkpoint written before epoch 1 is still loadable
    meta = load_checkpoint(build_model(8, "gabor", seed=3),
                           str(tmp_path / "checkpoint"))
    assert meta["epoch"] == 0
