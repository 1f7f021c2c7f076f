"""Pipeline oracles: lossless exhaustion, recompute-from-file inertia, search."""

import numpy as np
import pytest

from legopack import (
    LayerSpec,
    ModelBundle,
    Role,
    SearchPolicy,
    SkippedLayerWarning,
    Tensor,
    TooFewBlocks,
    ValidationError,
    breakup,
    compress,
    decode_compressed,
    deviation_eval,
    encode_compressed,
    encode_model,
    reconstruct,
    search_lego_a,
    search_lego_c,
)
from legopack.pipeline import FLAG_NOT_LOSSLESS, FLAG_TOLERANCE_UNMET

from conftest import block_patchwork, conv_model, dense_model, rng


def distinct_blocks(model: ModelBundle, b: int = 4) -> int:
    return int(np.unique(breakup(model, b).vectors, axis=0).shape[0])


def single_random_layer(rows: int, cols: int, seed: int = 0) -> ModelBundle:
    matrix = rng(seed).standard_normal((rows, cols)).astype(np.float32)
    return ModelBundle(
        (Tensor("w", Role.WEIGHT, matrix),),
        (LayerSpec("dense", in_dim=cols, out_dim=rows, weight_name="w"),),
    )


class TestCompressReconstruct:
    def test_lossless_at_exhaustion_32_blocks(self):
        model, _ = block_patchwork(32, (8, 8), b=4, seed=0)
        cm, rep = compress(model, k=32, b=4, seed=0)
        assert reconstruct(cm) == model
        assert rep.inertia == 0.0
        assert rep.bits_per_index == 5

    def test_lossless_through_file_bytes(self):
        model, _ = block_patchwork(32, (8, 8), b=4, seed=1)
        cm, _ = compress(model, k=32, b=4, seed=0)
        again = reconstruct(decode_compressed(encode_compressed(cm)))
        assert encode_model(again) == encode_model(model)

    def test_k1_is_single_mean_block(self):
        model = single_random_layer(16, 16, seed=2)
        cm, _ = compress(model, k=1, b=4, seed=0)
        blocks = breakup(model, 4)
        want = blocks.vectors.astype(np.float64).mean(axis=0).astype(np.float32)
        np.testing.assert_array_equal(cm.codebook.legos[0], want)
        out = breakup(reconstruct(cm), 4)
        assert (out.vectors == want[None, :]).all()

    def test_inertia_matches_recompute_from_encoded_bytes(self):
        model = single_random_layer(64, 64, seed=3)
        cm, rep = compress(model, k=8, b=4, seed=0)
        decoded = decode_compressed(encode_compressed(cm))
        blocks = breakup(model, 4)
        idx = decoded.layer_indices(decoded.compressed_layers[0])
        diff = blocks.vectors.astype(np.float64) - decoded.codebook.legos[idx].astype(np.float64)
        np.testing.assert_allclose(rep.inertia, (diff * diff).sum(), rtol=1e-12)

    def test_deterministic_bytes(self):
        model = conv_model(seed=4)
        a = encode_compressed(compress(model, k=8, b=4, seed=5)[0])
        c = encode_compressed(compress(model, k=8, b=4, seed=5)[0])
        assert a == c

    def test_report_accounting(self):
        model = conv_model(seed=5)
        cm, rep = compress(model, k=16, b=4, seed=0)
        assert rep.k == 16 and rep.b == 4 and rep.bits_per_index == 4
        assert rep.theoretical_cr == 128.0
        assert rep.block_count == cm.block_count == (8 * 4 + 16 * 32 + 12 * 64) // 16
        assert rep.compressed_params == rep.block_count * 16
        assert rep.raw_params == 8 + 16 + 12  # the three biases
        assert rep.skipped_layers == ()
        assert rep.effective_cr == len(encode_model(model)) / len(encode_compressed(cm))
        assert rep.metric_kind is None and rep.baseline_metric is None

    def test_skipped_layer_stored_raw_and_reported(self):
        model = ModelBundle(
            (
                Tensor("a", Role.WEIGHT, rng(6).standard_normal((8, 8)).astype(np.float32)),
                Tensor("odd", Role.WEIGHT, rng(7).standard_normal((5, 3)).astype(np.float32)),
            )
        )
        with pytest.warns(SkippedLayerWarning):
            cm, rep = compress(model, k=4, b=4, seed=0)
        assert rep.skipped_layers == ("odd",)
        assert [rl.tensor.name for rl in cm.raw_layers] == ["odd"]
        assert reconstruct(cm).layers[1] == model.layers[1]

    def test_k_above_block_count_rejected(self):
        with pytest.raises(TooFewBlocks):
            compress(single_random_layer(8, 8, seed=0), k=5, b=4, seed=0)

    def test_reconstruct_duplicate_layer_index_rejected(self):
        model = conv_model(seed=8)
        cm, _ = compress(model, k=4, b=4, seed=0)
        clash = cm.raw_layers[0]
        bad = type(cm)(
            cm.codebook,
            cm.bits_per_index,
            cm.compressed_layers,
            cm.raw_layers + (type(clash)(clash.layer_index, clash.tensor),),
            cm.arch_manifest,
        )
        with pytest.raises(ValidationError):
            reconstruct(bad)


def metric_on_distinct(cap: float):
    """Stub metric: number of distinct b=4 blocks, saturating at `cap`."""

    def eval_fn(model: ModelBundle) -> float:
        return float(min(distinct_blocks(model, 4), cap))

    return eval_fn


class TestSearchLegoA:
    def test_constant_metric_returns_smallest(self):
        model = single_random_layer(16, 16, seed=9)
        out = search_lego_a(model, 4, lambda m: 1.0, (2, 4, 8), seed=0)
        assert out.best_k == 2 and out.flag is None
        assert [r.k for r in out.reports] == [2, 4, 8]

    def test_monotone_metric_crossing_at_16(self):
        # baseline saturates at 16 distinct blocks; compressed models have
        # exactly K distinct blocks, so the first qualifying candidate is 16
        model = single_random_layer(32, 32, seed=10)
        assert distinct_blocks(model) == 64
        out = search_lego_a(model, 4, metric_on_distinct(16.0), (2, 4, 8, 16, 32), seed=0)
        assert out.best_k == 16 and out.flag is None
        assert out.baseline_metric == 16.0

    def test_not_lossless_flag_and_argmax(self):
        model = single_random_layer(32, 32, seed=11)
        out = search_lego_a(model, 4, metric_on_distinct(1e9), (2, 4, 8), seed=0)
        assert out.flag == FLAG_NOT_LOSSLESS
        assert out.best_k == 8  # argmax metric among candidates
        assert len(out.reports) == 3

    def test_data_free_eval_reaches_lossless(self):
        model, _ = block_patchwork(16, (8, 8), b=4, seed=12)
        ev = deviation_eval(model, count=16, seed=0)
        out = search_lego_a(model, 4, ev, (2, 4, 16), seed=0)
        assert out.best_k == 16 and out.flag is None
        assert out.best_report.compressed_metric == 0.0

    def test_candidates_must_increase(self):
        model = single_random_layer(16, 16, seed=13)
        with pytest.raises(ValidationError):
            search_lego_a(model, 4, lambda m: 0.0, (4, 4, 8), seed=0)


class TestSearchLegoC:
    def test_vacuous_epsilon_returns_first(self):
        model = single_random_layer(16, 16, seed=14)
        out = search_lego_c(model, 4, metric_on_distinct(8.0), epsilon=100.0, schedule=(2, 3, 4), seed=0)
        assert out.best_k == 2 and out.flag is None
        assert len(out.reports) == 1  # stops immediately, no overshoot

    def test_epsilon_zero_matches_lego_a_predicate(self):
        model = single_random_layer(32, 32, seed=15)
        schedule = (2, 4, 8, 16, 32)
        a = search_lego_a(model, 4, metric_on_distinct(16.0), schedule, seed=0)
        c = search_lego_c(model, 4, metric_on_distinct(16.0), epsilon=0.0, schedule=schedule, seed=0)
        assert c.best_k == a.best_k == 16

    def test_tolerance_unmet_flag(self):
        model = single_random_layer(32, 32, seed=16)
        out = search_lego_c(model, 4, metric_on_distinct(1e9), epsilon=0.0, schedule=(2, 4, 8), seed=0)
        assert out.flag == FLAG_TOLERANCE_UNMET
        assert out.best_k == 8
        assert len(out.reports) == 3

    def test_negative_epsilon_rejected(self):
        model = single_random_layer(16, 16, seed=17)
        with pytest.raises(ValidationError):
            search_lego_c(model, 4, lambda m: 0.0, epsilon=-1.0, schedule=(2, 4), seed=0)

    def test_reports_carry_metrics(self):
        model = single_random_layer(16, 16, seed=18)
        out = search_lego_c(model, 4, metric_on_distinct(4.0), epsilon=0.0, schedule=(2, 4), seed=0)
        for rep in out.reports:
            assert rep.baseline_metric == 4.0
            assert rep.compressed_metric is not None
            assert "eval" in rep.seconds


class TestSearchPolicy:
    def test_bad_mode_rejected(self):
        with pytest.raises(ValidationError):
            SearchPolicy("lego_x", (2, 4))

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValidationError):
            SearchPolicy("lego_a", ())
