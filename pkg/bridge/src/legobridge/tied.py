"""Block-sharing fine-tune stage for the committed fixture.

Freshly trained dense weights do not quantize well at this scale: tiling
them into 4x4 blocks and clustering leaves residuals comparable to the
weights themselves, which costs tens of accuracy points.  The committed
fixture is therefore trained to be compression-friendly: blocks are
clustered once, every block is tied to its cluster's shared pattern, and
the patterns (plus biases) are fine-tuned with the dense model as a
distillation teacher.  A final tiny dense drift separates the blocks again
(they stay inside tight clusters) so the committed model is not trivially
lossless at the tied size.

The functional forward here mirrors build_fixture_cnn layer for layer; it
exists so gradients can flow into the shared pattern table, which a plain
nn.Module parameter copy would sever.
"""

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.cluster import KMeans
from torch import nn

from .model import build_fixture_cnn

BLOCK = 4
TIED_PATTERNS = 64
KD_TEMPERATURE = 3.0
KD_WEIGHT = 0.7
OUTER_ROUNDS = 3
TIED_EPOCHS = 120
TIED_LR = 2e-3
RELAX_EPOCHS = 3
RELAX_LR = 5e-5
DRIFT_STEPS = 20
DRIFT_LR = 1e-5
BATCH = 64

WEIGHT_LAYERS = ("conv1", "conv2", "fc1", "fc2")


def _as_matrix(weight: np.ndarray) -> np.ndarray:
    return weight.reshape(weight.shape[0], -1)


def _blocks_of(mat: np.ndarray) -> np.ndarray:
    r, c = mat.shape
    return (
        mat.reshape(r // BLOCK, BLOCK, c // BLOCK, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(-1, BLOCK * BLOCK)
    )


def _layer_geometry(model: nn.Module):
    shapes = {}
    grids = {}
    for name in WEIGHT_LAYERS:
        shape = tuple(getattr(model, name).weight.shape)
        rows = shape[0]
        cols = int(np.prod(shape[1:]))
        shapes[name] = shape
        grids[name] = (rows // BLOCK, cols // BLOCK)
    return shapes, grids


def all_blocks(model: nn.Module) -> np.ndarray:
    mats = [
        _as_matrix(getattr(model, name).weight.detach().numpy())
        for name in WEIGHT_LAYERS
    ]
    return np.concatenate([_blocks_of(m) for m in mats])


def distinct_block_count(model: nn.Module) -> tuple[int, int]:
    blocks = all_blocks(model)
    return int(np.unique(blocks, axis=0).shape[0]), int(blocks.shape[0])


def cluster_blocks(blocks: np.ndarray, grids, warm=None, seed=0):
    """K-means over every block; returns the pattern table and per-layer labels."""
    if warm is None:
        km = KMeans(n_clusters=TIED_PATTERNS, n_init=8, random_state=seed).fit(blocks)
    else:
        km = KMeans(n_clusters=TIED_PATTERNS, n_init=1, init=warm).fit(blocks)
    table = torch.tensor(km.cluster_centers_, dtype=torch.float32)
    assigns = {}
    pos = 0
    for name in WEIGHT_LAYERS:
        count = grids[name][0] * grids[name][1]
        assigns[name] = torch.from_numpy(km.labels_[pos : pos + count].astype(np.int64))
        pos += count
    return table, assigns


def _realized(table, assign, grid, shape):
    rb, cb = grid
    mat = (
        table[assign]
        .view(rb, cb, BLOCK, BLOCK)
        .permute(0, 2, 1, 3)
        .reshape(rb * BLOCK, cb * BLOCK)
    )
    return mat.view(shape)


def _tied_forward(x, weights, biases):
    x = F.relu(F.conv2d(x, weights["conv1"], biases["conv1"], stride=2, padding=1))
    x = F.relu(F.conv2d(x, weights["conv2"], biases["conv2"], stride=1, padding=1))
    x = F.max_pool2d(x, 2, 2)
    x = torch.flatten(x, 1)
    x = F.relu(F.linear(x, weights["fc1"], biases["fc1"]))
    return F.linear(x, weights["fc2"], biases["fc2"])


def _kd_loss(logits, labels, teacher_logits, criterion):
    soft = (
        F.kl_div(
            F.log_softmax(logits / KD_TEMPERATURE, dim=1),
            F.softmax(teacher_logits / KD_TEMPERATURE, dim=1),
            reduction="batchmean",
        )
        * KD_TEMPERATURE
        * KD_TEMPERATURE
    )
    return KD_WEIGHT * soft + (1 - KD_WEIGHT) * criterion(logits, labels)


def apply_tied(table, assigns, biases) -> nn.Sequential:
    """A fresh fixture net whose weights are exactly the shared patterns."""
    model = build_fixture_cnn()
    shapes, grids = _layer_geometry(model)
    with torch.no_grad():
        for name in WEIGHT_LAYERS:
            layer = getattr(model, name)
            layer.weight.copy_(_realized(table, assigns[name], grids[name], shapes[name]))
            layer.bias.copy_(biases[name])
    model.eval()
    return model


def tie_and_finetune(dense_model, train_x, train_y, eval_x, eval_y, seed=0):
    """Returns (tied model, tied accuracy); dense_model is left untouched."""
    shapes, grids = _layer_geometry(dense_model)
    x = torch.from_numpy(train_x)
    y = torch.from_numpy(train_y)
    xe = torch.from_numpy(eval_x)
    dense_model.eval()
    with torch.no_grad():
        teacher = dense_model(x).detach()

    criterion = nn.CrossEntropyLoss()
    table, assigns = cluster_blocks(all_blocks(dense_model), grids, seed=seed)
    table.requires_grad_(True)
    biases = {
        name: getattr(dense_model, name).bias.detach().clone().requires_grad_(True)
        for name in WEIGHT_LAYERS
    }
    shuffler = torch.Generator().manual_seed(seed + 1)

    def realized_all():
        return {
            name: _realized(table, assigns[name], grids[name], shapes[name])
            for name in WEIGHT_LAYERS
        }

    def tied_accuracy():
        with torch.no_grad():
            logits = _tied_forward(xe, realized_all(), biases)
        return float((logits.argmax(1).numpy() == eval_y).mean() * 100.0)

    best_acc = -1.0
    best_state = None
    for outer in range(OUTER_ROUNDS):
        optimizer = torch.optim.Adam([table] + list(biases.values()), lr=TIED_LR)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=TIED_EPOCHS)
        for _ in range(TIED_EPOCHS):
            for chunk in torch.randperm(len(y), generator=shuffler).split(BATCH):
                optimizer.zero_grad()
                loss = _kd_loss(
                    _tied_forward(x[chunk], realized_all(), biases),
                    y[chunk],
                    teacher[chunk],
                    criterion,
                )
                loss.backward()
                optimizer.step()
            scheduler.step()
            acc = tied_accuracy()
            if acc > best_acc:
                best_acc = acc
                best_state = (
                    table.detach().clone(),
                    {k: v.clone() for k, v in assigns.items()},
                    {k: v.detach().clone() for k, v in biases.items()},
                )
        print(f"tied round {outer + 1}/{OUTER_ROUNDS}: best held-out {best_acc:.2f}")
        if outer == OUTER_ROUNDS - 1:
            break

        # brief dense relaxation, then re-cluster with the current table as init
        loose = {
            name: _realized(table, assigns[name], grids[name], shapes[name])
            .detach()
            .clone()
            .requires_grad_(True)
            for name in WEIGHT_LAYERS
        }
        relax_opt = torch.optim.Adam(list(loose.values()) + list(biases.values()), lr=RELAX_LR)
        for _ in range(RELAX_EPOCHS):
            for chunk in torch.randperm(len(y), generator=shuffler).split(BATCH):
                relax_opt.zero_grad()
                loss = _kd_loss(
                    _tied_forward(x[chunk], loose, biases), y[chunk], teacher[chunk], criterion
                )
                loss.backward()
                relax_opt.step()
        loosened = np.concatenate(
            [_blocks_of(_as_matrix(loose[name].detach().numpy())) for name in WEIGHT_LAYERS]
        )
        table, assigns = cluster_blocks(loosened, grids, warm=table.detach().numpy())
        table.requires_grad_(True)

    tied = apply_tied(*best_state)
    return tied, best_acc


def drift(model, train_x, train_y, seed=7) -> nn.Sequential:
    """A few tiny dense steps so every block is unique again.

    The steps are small enough that blocks stay inside the tight clusters
    the tied stage created, so accuracy is unchanged in practice.
    """
    x = torch.from_numpy(train_x)
    y = torch.from_numpy(train_y)
    criterion = nn.CrossEntropyLoss()
    optimizer = torch.optim.SGD(model.parameters(), lr=DRIFT_LR)
    shuffler = torch.Generator().manual_seed(seed)
    model.train()
    taken = 0
    for chunk in torch.randperm(len(y), generator=shuffler).split(BATCH):
        optimizer.zero_grad()
        criterion(model(x[chunk]), y[chunk]).backward()
        optimizer.step()
        taken += 1
        if taken >= DRIFT_STEPS:
            break
    model.eval()
    unique, total = distinct_block_count(model)
    if unique != total:
        raise RuntimeError(f"drift left duplicate blocks: {unique} of {total} distinct")
    return model
