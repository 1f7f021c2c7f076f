"""Command-line surface.

Every command writes machine-readable JSON to stdout (CSV for sweep) and
diagnostics to stderr. Exit codes: 0 success, 2 validation or format error,
3 I/O error. Output is deterministic for a fixed --seed except the wall-clock
`seconds` fields.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from .codec import (
    MAGIC_COMPRESSED,
    codebook_bytes,
    compute_cr,
    encode_compressed,
    read_compressed,
    write_compressed,
)
from .container import (
    ModelBundle,
    encode_model,
    model_param_count,
    read_dataset,
    read_model,
    write_model,
)
from .errors import FormatError, IoFailure, ValidationError
from .inference import forward, top1_accuracy
from .pipeline import (
    DEFAULT_CANDIDATES,
    DEFAULT_SCHEDULE,
    compress,
    make_eval,
    reconstruct,
    search_lego_a,
    search_lego_c,
)
from .report import (
    default_figure_path,
    outcome_to_dict,
    render_sweep_figure,
    report_to_dict,
    sweep_csv,
    to_json,
    write_sweep_csv,
)

EXIT_VALIDATION = 2
EXIT_IO = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _mapped_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except IoFailure as exc:
            _fail(EXIT_IO, str(exc))
        except (ValidationError, FormatError, ValueError) as exc:
            _fail(EXIT_VALIDATION, str(exc))
        except OSError as exc:
            _fail(EXIT_IO, str(exc))

    return wrapper


def _load_model_or_compressed(path: str) -> ModelBundle:
    """Accept either a raw model or a compressed one; reconstruct the latter."""
    try:
        with Path(path).open("rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if head == MAGIC_COMPRESSED:
        return reconstruct(read_compressed(path))
    return read_model(path)


def _parse_k_list(_ctx, _param, value: str | None) -> tuple[int, ...] | None:
    if value is None:
        return None
    try:
        ks = tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise click.BadParameter("expected comma-separated integers, e.g. 4,8,16")
    if not ks:
        raise click.BadParameter("at least one K is required")
    return ks


def _echo_json(payload: dict) -> None:
    click.echo(to_json(payload))


seed_option = click.option("--seed", type=int, default=0, show_default=True, help="RNG seed.")
threads_option = click.option(
    "--threads",
    type=int,
    default=1,
    show_default=True,
    help="Accepted for interface stability; results never depend on it.",
)
kmeans_options = (
    click.option("--max-iters", type=int, default=100, show_default=True),
    click.option("--tol", type=float, default=1e-6, show_default=True, help="Relative inertia tolerance."),
)


def _with(*decorators):
    def apply(fn):
        for dec in reversed(decorators):
            fn = dec(fn)
        return fn

    return apply


@click.group()
@click.version_option(package_name="legopack")
def main():
    """Block-cluster model compression: codebook + packed indices."""


@main.command(name="compress")
@click.argument("model_path", type=click.Path())
@click.argument("out_path", type=click.Path())
@click.option("--k", type=int, required=True, help="Codebook size (number of legos).")
@click.option("--b", type=int, default=4, show_default=True, help="Block side length.")
@_with(seed_option, threads_option, *kmeans_options)
@_mapped_errors
def cmd_compress(model_path, out_path, k, b, seed, threads, max_iters, tol):
    """Compress MODEL_PATH into OUT_PATH and print the report."""
    model = read_model(model_path)
    cm, rep = compress(model, k, b, seed=seed, max_iters=max_iters, rel_tol=tol)
    write_compressed(cm, out_path)
    _echo_json(report_to_dict(rep))


@main.command(name="decompress")
@click.argument("lgnc_path", type=click.Path())
@click.argument("out_path", type=click.Path())
@_mapped_errors
def cmd_decompress(lgnc_path, out_path):
    """Reconstruct LGNC_PATH into a dense model file at OUT_PATH."""
    model = reconstruct(read_compressed(lgnc_path))
    write_model(model, out_path)
    _echo_json(
        {
            "written": str(out_path),
            "layer_count": len(model.layers),
            "param_count": model_param_count(model),
        }
    )


@main.command(name="eval")
@click.argument("model_path", type=click.Path())
@click.argument("dataset_path", type=click.Path())
@click.option("--dump-logits", type=int, default=0, show_default=True, help="Include logits for the first N samples.")
@_with(threads_option)
@_mapped_errors
def cmd_eval(model_path, dataset_path, dump_logits, threads):
    """Top-1 accuracy of a model (raw or compressed) on a dataset."""
    model = _load_model_or_compressed(model_path)
    dataset = read_dataset(dataset_path)
    payload = {
        "accuracy_pct": top1_accuracy(model, dataset),
        "n": dataset.n,
        "num_classes": dataset.num_classes,
    }
    if dump_logits > 0:
        n = min(dump_logits, dataset.n)
        logits = forward(model, dataset.inputs.data[:n])
        payload["logits"] = [[float(v) for v in row] for row in logits]
        payload["labels"] = [int(v) for v in dataset.labels[:n]]
    _echo_json(payload)


@main.command(name="sweep")
@click.argument("model_path", type=click.Path())
@click.option("--dataset", "dataset_path", type=click.Path(), default=None, help="LGTD file; omit for the data-free metric.")
@click.option("--b", type=int, default=4, show_default=True)
@click.option("--k-list", callback=_parse_k_list, default="4,8,16,32,64,128,256", show_default=True, help="Comma-separated K values.")
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="Also write the CSV here (a PNG lands next to it).")
@click.option("--fig", "fig_path", type=click.Path(), default=None, help="Figure path (default: CSV path with .png).")
@_with(seed_option, threads_option, *kmeans_options)
@_mapped_errors
def cmd_sweep(model_path, dataset_path, b, k_list, csv_path, fig_path, seed, threads, max_iters, tol):
    """Metric vs K table over a list of candidate codebook sizes."""
    model = read_model(model_path)
    dataset = read_dataset(dataset_path) if dataset_path else None
    eval_fn, metric_kind = make_eval(model, dataset, probe_seed=seed)
    outcome = search_lego_a(
        model, b, eval_fn, k_list, seed=seed, max_iters=max_iters, rel_tol=tol, metric_kind=metric_kind
    )
    click.echo(sweep_csv(outcome.reports), nl=False)
    if csv_path:
        write_sweep_csv(outcome.reports, csv_path)
        fig_path = fig_path or default_figure_path(csv_path)
    if fig_path:
        render_sweep_figure(
            outcome.reports, fig_path, baseline_metric=outcome.baseline_metric, metric_kind=metric_kind
        )
        click.echo(f"figure written to {fig_path}", err=True)


@main.command(name="search")
@click.argument("model_path", type=click.Path())
@click.option("--dataset", "dataset_path", type=click.Path(), default=None, help="LGTD file; omit for the data-free metric.")
@click.option("--mode", type=click.Choice(["a", "c"]), default="a", show_default=True)
@click.option("--b", type=int, default=4, show_default=True)
@click.option("--epsilon", type=float, default=0.0, show_default=True, help="Tolerated metric loss (mode c).")
@click.option("--k-list", callback=_parse_k_list, default=None, help="Candidate Ks (default: powers of two for a, 2..256 for c).")
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="Also write the report trail as CSV (+PNG).")
@click.option("--fig", "fig_path", type=click.Path(), default=None)
@_with(seed_option, threads_option, *kmeans_options)
@_mapped_errors
def cmd_search(model_path, dataset_path, mode, b, epsilon, k_list, csv_path, fig_path, seed, threads, max_iters, tol):
    """Select K using the accuracy-first (a) or tolerance (c) policy."""
    model = read_model(model_path)
    dataset = read_dataset(dataset_path) if dataset_path else None
    eval_fn, metric_kind = make_eval(model, dataset, probe_seed=seed)
    if mode == "a":
        outcome = search_lego_a(
            model, b, eval_fn, k_list or DEFAULT_CANDIDATES,
            seed=seed, max_iters=max_iters, rel_tol=tol, metric_kind=metric_kind,
        )
    else:
        outcome = search_lego_c(
            model, b, eval_fn, epsilon, k_list or DEFAULT_SCHEDULE,
            seed=seed, max_iters=max_iters, rel_tol=tol, metric_kind=metric_kind,
        )
    _echo_json(outcome_to_dict(outcome))
    if csv_path:
        write_sweep_csv(outcome.reports, csv_path)
        fig_path = fig_path or default_figure_path(csv_path)
    if fig_path:
        render_sweep_figure(
            outcome.reports, fig_path, baseline_metric=outcome.baseline_metric, metric_kind=metric_kind
        )
        click.echo(f"figure written to {fig_path}", err=True)


@main.command(name="stats")
@click.argument("lgnc_path", type=click.Path())
@_mapped_errors
def cmd_stats(lgnc_path):
    """Size accounting for a compressed file."""
    cm = read_compressed(lgnc_path)
    k, b = cm.codebook.k, cm.codebook.b
    p_compressed = cm.block_count * b * b
    p_raw = sum(rl.tensor.size for rl in cm.raw_layers)
    cr = compute_cr(p_compressed, p_raw, k, b, cm.wordlength)
    effective_cr = len(encode_model(reconstruct(cm))) / len(encode_compressed(cm))
    _echo_json(
        {
            "k": k,
            "b": b,
            "bits_per_index": cm.bits_per_index,
            "wordlength": cm.wordlength,
            "theoretical_cr": cr.theoretical_cr,
            "effective_cr": effective_cr,
            "compressed_bits": cr.compressed_bits,
            "codebook_bits": cr.codebook_bits,
            "codebook_bytes": codebook_bytes(k, b, cm.wordlength),
            "block_count": cm.block_count,
            "compressed_params": p_compressed,
            "raw_params": p_raw,
            "compressed_layers": [cl.name for cl in cm.compressed_layers],
            "raw_layers": [rl.tensor.name for rl in cm.raw_layers],
        }
    )


if __name__ == "__main__":
    main()
