"""Export operations: model to LGTW, eval subset to LGTD, reference logits.

The digits corpus (1797 8x8 grayscale images, classes 0..9) is split once by
a fixed permutation: the first 1000 shuffled samples are the frozen
evaluation subset, the remaining 797 are the training pool.  Pixels arrive
in 0..16 and are normalized to 0..1, identically at train and export time.
"""

import json
from pathlib import Path

import numpy as np
import torch
from sklearn.datasets import load_digits

from .formats import encode_lgtd, encode_lgtw
from .model import NUM_CLASSES, load_fixture_cnn, walk_module

SPLIT_SEED = 20240613
EVAL_SIZE = 1000
REFERENCE_COUNT = 10


def digits_split():
    """(train_inputs, train_labels, eval_inputs, eval_labels), all f32/int64.

    Inputs are [n, 1, 8, 8] in 0..1.
    """
    bunch = load_digits()
    images = (bunch.images / 16.0).astype(np.float32)[:, None, :, :]
    labels = bunch.target.astype(np.int64)
    order = np.random.default_rng(SPLIT_SEED).permutation(len(labels))
    eval_idx = order[:EVAL_SIZE]
    train_idx = order[EVAL_SIZE:]
    return images[train_idx], labels[train_idx], images[eval_idx], labels[eval_idx]


def _resolve(model_or_checkpoint) -> torch.nn.Module:
    if isinstance(model_or_checkpoint, (str, Path)):
        return load_fixture_cnn(model_or_checkpoint)
    model_or_checkpoint.eval()
    return model_or_checkpoint


def export_model(model_or_checkpoint, out_path) -> bytes:
    """Flatten a supported torch module into an LGTW file; returns the bytes."""
    tensors, manifest = walk_module(_resolve(model_or_checkpoint))
    raw = encode_lgtw(tensors, manifest)
    Path(out_path).write_bytes(raw)
    return raw


def export_dataset(n_samples, out_path) -> bytes:
    """First n_samples of the frozen evaluation split as an LGTD file."""
    _, _, eval_inputs, eval_labels = digits_split()
    if not 1 <= n_samples <= len(eval_labels):
        raise ValueError(f"n_samples must be in 1..{len(eval_labels)}")
    raw = encode_lgtd(
        eval_inputs[:n_samples], eval_labels[:n_samples], NUM_CLASSES
    )
    Path(out_path).write_bytes(raw)
    return raw


@torch.no_grad()
def framework_logits(model_or_checkpoint, inputs: np.ndarray) -> np.ndarray:
    model = _resolve(model_or_checkpoint)
    return model(torch.from_numpy(np.ascontiguousarray(inputs, np.float32))).numpy()


@torch.no_grad()
def framework_accuracy(model_or_checkpoint, inputs, labels) -> float:
    logits = framework_logits(model_or_checkpoint, inputs)
    return float((logits.argmax(axis=1) == labels).mean() * 100.0)


def emit_reference_logits(model_or_checkpoint, out_path, count=REFERENCE_COUNT) -> dict:
    """Framework logits for the first samples of the frozen eval split."""
    _, _, eval_inputs, eval_labels = digits_split()
    logits = framework_logits(model_or_checkpoint, eval_inputs[:count])
    record = {
        "logits": [[float(v) for v in row] for row in logits],
        "labels": [int(v) for v in eval_labels[:count]],
    }
    Path(out_path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    return record


def emit_baseline(model_or_checkpoint, out_path, n_samples=EVAL_SIZE) -> dict:
    """Framework accuracy on the exported subset, the committed comparison point."""
    _, _, eval_inputs, eval_labels = digits_split()
    record = {
        "accuracy_pct": framework_accuracy(
            model_or_checkpoint, eval_inputs[:n_samples], eval_labels[:n_samples]
        ),
        "n": int(n_samples),
        "num_classes": NUM_CLASSES,
    }
    Path(out_path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    return record
