"""Shared fixtures: deterministic toy models and paths to committed fixtures."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from legopack import LayerSpec, ModelBundle, Role, Tensor

FIXTURE_DIR = Path(__file__).parent / "fixtures"

FIXTURE_MODEL = FIXTURE_DIR / "digits_cnn.lgtw"
FIXTURE_DATASET = FIXTURE_DIR / "digits_eval.lgtd"
FIXTURE_LOGITS = FIXTURE_DIR / "reference_logits.json"
FIXTURE_BASELINE = FIXTURE_DIR / "baseline.json"


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def dense_model(
    dims: tuple[int, ...] = (32, 16, 10), seed: int = 0, relu: bool = True, bias: bool = True
) -> ModelBundle:
    """Fully-connected f32 model with random weights, optional relu/bias."""
    g = rng(seed)
    tensors: list[Tensor] = []
    specs: list[LayerSpec] = []
    for i, (din, dout) in enumerate(zip(dims, dims[1:])):
        wname, bname = f"fc{i}.w", f"fc{i}.b"
        tensors.append(Tensor(wname, Role.WEIGHT, g.standard_normal((dout, din)).astype(np.float32)))
        if bias:
            tensors.append(Tensor(bname, Role.BIAS, g.standard_normal(dout).astype(np.float32)))
        specs.append(
            LayerSpec("dense", in_dim=din, out_dim=dout, weight_name=wname,
                      bias_name=bname if bias else None)
        )
        if relu and i < len(dims) - 2:
            specs.append(LayerSpec("relu"))
    return ModelBundle(tuple(tensors), tuple(specs))


def conv_model(seed: int = 0) -> ModelBundle:
    """Small conv/pool/dense model; every weight matrix divisible by b=4."""
    g = rng(seed)

    def t(name, role, shape):
        return Tensor(name, role, g.standard_normal(shape).astype(np.float32))

    tensors = (
        t("c0.w", Role.WEIGHT, (8, 1, 2, 2)),
        t("c0.b", Role.BIAS, (8,)),
        t("c1.w", Role.WEIGHT, (16, 8, 2, 2)),
        t("c1.b", Role.BIAS, (16,)),
        t("fc.w", Role.WEIGHT, (12, 64)),
        t("fc.b", Role.BIAS, (12,)),
    )
    specs = (
        LayerSpec("conv2d", in_ch=1, out_ch=8, kh=2, kw=2, stride=2, padding=0,
                  weight_name="c0.w", bias_name="c0.b"),
        LayerSpec("relu"),
        LayerSpec("conv2d", in_ch=8, out_ch=16, kh=2, kw=2, stride=1, padding=1,
                  weight_name="c1.w", bias_name="c1.b"),
        LayerSpec("relu"),
        LayerSpec("maxpool2d", kh=2, kw=2, stride=2),
        LayerSpec("flatten"),
        LayerSpec("dense", in_dim=64, out_dim=12, weight_name="fc.w", bias_name="fc.b"),
    )
    return ModelBundle(tensors, specs)


def block_patchwork(
    distinct: int, grid: tuple[int, int], b: int = 4, seed: int = 0
) -> tuple[ModelBundle, np.ndarray]:
    """Single-layer model tiled from exactly `distinct` unique b-by-b blocks.

    Returns the model and the (distinct, b*b) palette it was tiled from.
    """
    g = rng(seed)
    palette = g.standard_normal((distinct, b * b)).astype(np.float32)
    rows_b, cols_b = grid
    n = rows_b * cols_b
    if n < distinct:
        raise ValueError("grid too small to use every palette entry")
    # use every palette block at least once, then cycle
    picks = np.concatenate([np.arange(distinct), np.arange(n - distinct) % distinct])
    tiles = palette[picks].reshape(rows_b, cols_b, b, b)
    matrix = tiles.transpose(0, 2, 1, 3).reshape(rows_b * b, cols_b * b)
    out_dim, in_dim = matrix.shape
    model = ModelBundle(
        (Tensor("w", Role.WEIGHT, matrix),),
        (LayerSpec("dense", in_dim=in_dim, out_dim=out_dim, weight_name="w"),),
    )
    return model, palette


@pytest.fixture
def tmp_path_str(tmp_path):
    return str(tmp_path)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines: dict[str, str] = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid or "::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            verdict = "PASS" if outcome == "passed" else "FAIL"
            # a setup error must not be overwritten by a skipped call phase
            if lines.get(name) != "FAIL":
                lines[name] = verdict
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(lines):
        terminalreporter.write_line(f"{lines[name]} - {name}")
