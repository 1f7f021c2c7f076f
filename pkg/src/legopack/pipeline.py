"""End-to-end compression, reconstruction, and K-selection search.

compress runs breakup -> kmeans -> pack -> LGNC assembly and reports both the
theoretical per-parameter ratio and the effective on-disk ratio (encoded LGTW
bytes over encoded LGNC bytes). The two search policies select K over an
increasing schedule: lego_a takes the smallest K whose metric matches the
baseline, lego_c the first K within an accuracy-loss tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .blocking import _untile, breakup
from .clustering import kmeans
from .codec import (
    CompressedLayer,
    CompressedModel,
    RawLayer,
    bits_for_k,
    compute_cr,
    encode_compressed,
    pack_indices,
)
from .container import DatasetBundle, ModelBundle, Tensor, encode_model
from .errors import ValidationError
from .inference import output_deviation, probe_inputs, top1_accuracy

EvalFn = Callable[[ModelBundle], float]

DEFAULT_CANDIDATES = (2, 4, 8, 16, 32, 64, 128, 256)
DEFAULT_SCHEDULE = tuple(range(2, 257))

FLAG_NOT_LOSSLESS = "NotLossless"
FLAG_TOLERANCE_UNMET = "ToleranceUnmet"

METRIC_ACCURACY = "accuracy_pct"
METRIC_NEG_DEVIATION = "neg_output_deviation"


@dataclass(frozen=True)
class CompressionReport:
    """Everything reported about one (model, K, b, seed) compression run."""

    k: int
    b: int
    bits_per_index: int
    theoretical_cr: float
    effective_cr: float
    compressed_bits: int
    codebook_bits: int
    inertia: float
    iterations: int
    block_count: int
    compressed_params: int
    raw_params: int
    skipped_layers: tuple[str, ...]
    seed: int
    seconds: dict[str, float] = field(default_factory=dict)
    metric_kind: str | None = None
    baseline_metric: float | None = None
    compressed_metric: float | None = None


@dataclass(frozen=True)
class SearchPolicy:
    """A K-selection strategy: which policy, its tolerance, and the schedule."""

    mode: str
    k_candidates: tuple[int, ...]
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "k_candidates", tuple(self.k_candidates))
        if self.mode not in ("lego_a", "lego_c"):
            raise ValidationError(f"unknown search mode {self.mode!r}")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0")
        if not self.k_candidates:
            raise ValidationError("k_candidates must be non-empty")
        if any(x >= y for x, y in zip(self.k_candidates, self.k_candidates[1:])):
            raise ValidationError("k_candidates must be strictly increasing")
        if self.k_candidates[0] < 1:
            raise ValidationError("k_candidates must be >= 1")


@dataclass(frozen=True)
class SearchOutcome:
    """Chosen K plus the per-candidate report trail, in schedule order."""

    mode: str
    best_k: int
    flag: str | None
    baseline_metric: float
    metric_kind: str
    reports: tuple[CompressionReport, ...]

    @property
    def best_report(self) -> CompressionReport:
        for rep in self.reports:
            if rep.k == self.best_k:
                return rep
        raise KeyError(self.best_k)


def compress(
    model: ModelBundle,
    k: int,
    b: int,
    seed: int = 0,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
) -> tuple[CompressedModel, CompressionReport]:
    """Cluster the model's blocks into K legos and assemble the LGNC model."""
    t0 = time.perf_counter()
    blocks = breakup(model, b)
    t1 = time.perf_counter()
    codebook, assignment = kmeans(blocks, k, seed, max_iters=max_iters, rel_tol=rel_tol)
    t2 = time.perf_counter()

    bits = bits_for_k(k)
    compressed: list[CompressedLayer] = []
    cursor = 0
    for idx in blocks.layer_grid:
        rows_b, cols_b = blocks.layer_grid[idx]
        count = rows_b * cols_b
        seg = assignment.indices[cursor : cursor + count]
        cursor += count
        t = model.layers[idx]
        compressed.append(
            CompressedLayer(idx, t.name, t.role, t.shape, rows_b, cols_b, pack_indices(seg, bits))
        )
    raws = tuple(
        RawLayer(idx, t) for idx, t in enumerate(model.layers) if idx not in blocks.layer_grid
    )
    cm = CompressedModel(codebook, bits, tuple(compressed), raws, model.arch_manifest)
    t3 = time.perf_counter()

    p_compressed = blocks.num_blocks * b * b
    p_raw = sum(rl.tensor.size for rl in raws)
    cr = compute_cr(p_compressed, p_raw, k, b)
    effective_cr = len(encode_model(model)) / len(encode_compressed(cm))
    report = CompressionReport(
        k=k,
        b=b,
        bits_per_index=bits,
        theoretical_cr=cr.theoretical_cr,
        effective_cr=effective_cr,
        compressed_bits=cr.compressed_bits,
        codebook_bits=cr.codebook_bits,
        inertia=assignment.inertia,
        iterations=len(assignment.inertia_trace),
        block_count=blocks.num_blocks,
        compressed_params=p_compressed,
        raw_params=p_raw,
        skipped_layers=tuple(model.layers[i].name for i in blocks.skipped_layers),
        seed=seed,
        seconds={
            "breakup": t1 - t0,
            "cluster": t2 - t1,
            "pack": t3 - t2,
            "total": t3 - t0,
        },
    )
    return cm, report


def reconstruct(cm: CompressedModel) -> ModelBundle:
    """Materialize the dense model a compressed file describes.

    Self-contained: needs nothing beyond the CompressedModel itself.
    """
    placed: dict[int, Tensor] = {}
    for cl in cm.compressed_layers:
        indices = cm.layer_indices(cl)
        matrix = _untile(cm.codebook.legos[indices], cl.rows_b, cl.cols_b, cm.codebook.b)
        if int(np.prod(cl.shape)) != matrix.size:
            raise ValidationError(
                f"layer {cl.name!r}: tile grid holds {matrix.size} values, "
                f"shape {cl.shape} needs {int(np.prod(cl.shape))}"
            )
        if cl.layer_index in placed:
            raise ValidationError(f"duplicate layer_index {cl.layer_index}")
        placed[cl.layer_index] = Tensor(cl.name, cl.role, matrix.reshape(cl.shape))
    for rl in cm.raw_layers:
        if rl.layer_index in placed:
            raise ValidationError(f"duplicate layer_index {rl.layer_index}")
        placed[rl.layer_index] = rl.tensor
    layers = tuple(placed[i] for i in sorted(placed))
    return ModelBundle(layers, cm.arch_manifest)


def accuracy_eval(dataset: DatasetBundle) -> EvalFn:
    """Metric: top-1 accuracy in percentage points (higher is better)."""
    return lambda m: top1_accuracy(m, dataset)


def deviation_eval(reference: ModelBundle, count: int = 128, seed: int = 0) -> EvalFn:
    """Data-free metric: negative mean output deviation from the reference
    model on a fixed seeded probe batch (0 at the reference, negative below).
    """
    probes = probe_inputs(reference, count=count, seed=seed)
    # + 0.0 turns -0.0 into 0.0 so the lossless case prints cleanly
    return lambda m: -output_deviation(reference, m, probes) + 0.0


def make_eval(
    model: ModelBundle, dataset: DatasetBundle | None = None, probe_seed: int = 0
) -> tuple[EvalFn, str]:
    if dataset is not None:
        return accuracy_eval(dataset), METRIC_ACCURACY
    return deviation_eval(model, seed=probe_seed), METRIC_NEG_DEVIATION


def _evaluated_report(
    model: ModelBundle,
    k: int,
    b: int,
    eval_fn: EvalFn,
    baseline: float,
    metric_kind: str,
    seed: int,
    max_iters: int,
    rel_tol: float,
) -> CompressionReport:
    cm, rep = compress(model, k, b, seed=seed, max_iters=max_iters, rel_tol=rel_tol)
    t0 = time.perf_counter()
    metric = float(eval_fn(reconstruct(cm)))
    seconds = dict(rep.seconds)
    seconds["eval"] = time.perf_counter() - t0
    seconds["total"] += seconds["eval"]
    return replace(
        rep,
        seconds=seconds,
        metric_kind=metric_kind,
        baseline_metric=baseline,
        compressed_metric=metric,
    )


def search_lego_a(
    model: ModelBundle,
    b: int,
    eval_fn: EvalFn,
    k_candidates: tuple[int, ...] = DEFAULT_CANDIDATES,
    seed: int = 0,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    metric_kind: str = "metric",
) -> SearchOutcome:
    """Smallest candidate K whose metric is at least the baseline.

    Every candidate is evaluated (reports retained for the whole sweep); if no
    candidate reaches the baseline the argmax-metric one is returned flagged
    NotLossless.
    """
    policy = SearchPolicy("lego_a", tuple(k_candidates))
    baseline = float(eval_fn(model))
    reports = tuple(
        _evaluated_report(model, k, b, eval_fn, baseline, metric_kind, seed, max_iters, rel_tol)
        for k in policy.k_candidates
    )
    for rep in reports:
        if rep.compressed_metric >= baseline:
            return SearchOutcome("lego_a", rep.k, None, baseline, metric_kind, reports)
    best = max(reports, key=lambda r: r.compressed_metric)
    return SearchOutcome("lego_a", best.k, FLAG_NOT_LOSSLESS, baseline, metric_kind, reports)


def search_lego_c(
    model: ModelBundle,
    b: int,
    eval_fn: EvalFn,
    epsilon: float,
    schedule: tuple[int, ...] = DEFAULT_SCHEDULE,
    seed: int = 0,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    metric_kind: str = "metric",
) -> SearchOutcome:
    """First K in the increasing schedule within epsilon of the baseline.

    Stops as soon as the tolerance is met (no overshoot); on exhaustion the
    best-metric K is returned flagged ToleranceUnmet.
    """
    policy = SearchPolicy("lego_c", tuple(schedule), epsilon=float(epsilon))
    baseline = float(eval_fn(model))
    reports: list[CompressionReport] = []
    for k in policy.k_candidates:
        rep = _evaluated_report(model, k, b, eval_fn, baseline, metric_kind, seed, max_iters, rel_tol)
        reports.append(rep)
        if baseline - rep.compressed_metric <= policy.epsilon:
            return SearchOutcome("lego_c", k, None, baseline, metric_kind, tuple(reports))
    best = max(reports, key=lambda r: r.compressed_metric)
    return SearchOutcome(
        "lego_c", best.k, FLAG_TOLERANCE_UNMET, baseline, metric_kind, tuple(reports)
    )
