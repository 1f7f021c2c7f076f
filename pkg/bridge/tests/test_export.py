"""Export determinism and dataset split properties."""

import json

import numpy as np

from legobridge.export import (
    EVAL_SIZE,
    digits_split,
    emit_reference_logits,
    export_dataset,
    export_model,
)
from legobridge.formats import decode_lgtd, decode_lgtw
from legobridge.model import HEAD_WIDTH, build_fixture_cnn


def test_split_is_deterministic_and_disjoint():
    tx1, ty1, ex1, ey1 = digits_split()
    tx2, ty2, ex2, ey2 = digits_split()
    assert np.array_equal(tx1, tx2) and np.array_equal(ey1, ey2)
    assert len(ey1) == EVAL_SIZE
    assert len(ty1) == 1797 - EVAL_SIZE
    assert tx1.shape[1:] == (1, 8, 8)
    assert float(tx1.min()) >= 0.0 and float(tx1.max()) <= 1.0
    # no sample appears in both halves
    train_keys = {t.tobytes() for t in tx1}
    eval_keys = {e.tobytes() for e in ex1}
    assert len(train_keys & eval_keys) == 0


def test_export_dataset_first_n(tmp_path):
    full = export_dataset(50, tmp_path / "a.lgtd")
    again = export_dataset(50, tmp_path / "b.lgtd")
    assert full == again
    inputs, labels, num_classes = decode_lgtd(full)
    assert inputs.shape == (50, 1, 8, 8)
    assert num_classes == 10
    assert int(labels.max()) <= 9
    _, _, eval_x, eval_y = digits_split()
    assert np.array_equal(inputs, eval_x[:50])
    assert np.array_equal(labels, eval_y[:50].astype(np.uint32))


def test_export_model_deterministic(tmp_path):
    model = build_fixture_cnn()
    model.eval()
    raw1 = export_model(model, tmp_path / "m1.lgtw")
    raw2 = export_model(model, tmp_path / "m2.lgtw")
    assert raw1 == raw2
    tensors, manifest = decode_lgtw(raw1)
    assert len(tensors) == 8
    assert len(manifest) == 9


def test_reference_logits_shape(tmp_path):
    model = build_fixture_cnn()
    model.eval()
    record = emit_reference_logits(model, tmp_path / "ref.json", count=10)
    on_disk = json.loads((tmp_path / "ref.json").read_text())
    assert on_disk == record
    assert len(record["logits"]) == 10
    assert all(len(row) == HEAD_WIDTH for row in record["logits"])
    assert all(0 <= label <= 9 for label in record["labels"])
