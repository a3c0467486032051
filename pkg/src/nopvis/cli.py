"""Command-line interface.

Exit codes: 0 on success, 2 on input errors (bad paths, malformed Smali,
invalid manifests), 3 when a requested metric hit its division-by-zero
policy (the output is still written).
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import __version__
from .attack import EmptyTemplateError
from .corpus import MotifSpec, generate_corpus, load_labeled_apps
from .detector import (
    DetectorConfig,
    init_model,
    load_model,
    save_model,
    train,
)
from .experiment import (
    evaluate,
    metrics_to_csv,
    run_attack_experiment,
    run_sweep,
    sequences_for,
    spearman,
    split_corpus,
    sweep_to_csv,
    sweep_to_json,
)
from .inject import (
    AttackKind,
    AttackVariant,
    EmptyManifestError,
    InjectionPlan,
    MethodSelector,
    apply_attack,
)
from .interp import Verdict, check_equivalence
from .opcodes import default_table
from .smali import (
    SmaliParseError,
    extract_opcode_sequence,
    load_app,
    parse_class,
    save_app,
)
from .validation import InputError
from .visibility import CccWeights, InjectionManifest, UndefinedMetricError, ccc

EXIT_INPUT_ERROR = 2
EXIT_DEGENERATE = 3


@dataclass
class CliContext:
    seed: int = 0
    out: Path | None = None
    fmt: str = "json"
    threshold: float = 0.5


def _emit(ctx: CliContext, text: str) -> None:
    if ctx.out is not None:
        ctx.out.parent.mkdir(parents=True, exist_ok=True)
        ctx.out.write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=not text.endswith("\n"))


def _fail_input(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_INPUT_ERROR)


@click.group()
@click.version_option(version=__version__, prog_name="nopvis")
@click.option("--seed", type=int, default=0, show_default=True, help="Global RNG seed.")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Write primary output to this path instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True, help="Output format where both are supported.")
@click.option("--threshold", type=float, default=0.5, show_default=True,
              help="Malware decision threshold.")
@click.pass_context
def main(ctx, seed, out, fmt, threshold):
    """Smali NOP injection, visibility scoring, and evasion experiments."""
    ctx.obj = CliContext(seed=seed, out=out, fmt=fmt, threshold=threshold)


@main.command()
@click.argument("path", type=click.Path(exists=True, path_type=Path))
@click.pass_obj
def parse(obj: CliContext, path: Path):
    """Parse a .smali file or app directory and summarize its structure."""
    try:
        if path.is_dir():
            app = load_app(path)
            classes = app.classes
        else:
            classes = (parse_class(path.read_text(encoding="utf-8"),
                                   source_name=path.name),)
    except SmaliParseError as exc:
        _fail_input(str(exc))
    summary = {
        "classes": len(classes),
        "methods": sum(len(c.methods) for c in classes),
        "instructions": sum(m.instruction_count for c in classes for m in c.methods),
        "diagnostics": sorted({d for c in classes for d in c.diagnostics}),
        "class_names": [c.class_name for c in classes],
    }
    _emit(obj, json.dumps(summary, indent=2))


@main.command()
@click.argument("path", type=click.Path(exists=True, path_type=Path))
@click.option("--max-len", type=int, default=8192, show_default=True)
@click.pass_obj
def extract(obj: CliContext, path: Path, max_len: int):
    """Extract the padded opcode-id sequence of an app directory."""
    try:
        app = load_app(path) if path.is_dir() else None
        if app is None:
            cls = parse_class(path.read_text(encoding="utf-8"), source_name=path.name)
            seq = extract_opcode_sequence([cls], max_len=max_len, app_id=path.stem)
        else:
            seq = extract_opcode_sequence(app, max_len=max_len)
    except (SmaliParseError, ValueError) as exc:
        _fail_input(str(exc))
    if obj.fmt == "csv":
        lines = ["index,opcode_id"] + [f"{i},{v}" for i, v in enumerate(seq.ids)]
        _emit(obj, "\n".join(lines) + "\n")
    else:
        _emit(obj, json.dumps(
            {"app_id": seq.app_id, "length": len(seq), "ids": list(seq.ids)}))


def _variant_from_options(variant, count, x1, x2) -> AttackVariant:
    kind = AttackKind(variant)
    return AttackVariant(kind=kind, payload_opcodes=(x1, x2), nop_count=count)


@main.command()
@click.argument("src", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--variant", type=click.Choice([k.value for k in AttackKind]),
              required=True, help="Attack to apply.")
@click.option("--count", type=int, default=3, show_default=True,
              help="NOP lines per method (nop variant).")
@click.option("--x1", default="sub-int", show_default=True)
@click.option("--x2", default="xor-int", show_default=True)
@click.option("--horizon", type=int, default=8192, show_default=True,
              help="Only inject methods starting inside this opcode horizon.")
@click.pass_obj
def inject(obj: CliContext, src: Path, variant: str, count: int,
           x1: str, x2: str, horizon: int):
    """Inject an attack into an app tree; writes the modified tree."""
    if obj.out is None:
        _fail_input("inject requires --out DIRECTORY (before the subcommand)")
    try:
        app = load_app(src)
        plan = InjectionPlan(
            variant=_variant_from_options(variant, count, x1, x2),
            selector=MethodSelector(horizon=horizon),
        )
        skips: list[dict] = []
        modified, manifest = apply_attack(app, plan, skip_log=skips)
    except (SmaliParseError, EmptyManifestError, ValueError) as exc:
        _fail_input(str(exc))
    out_dir = obj.out
    save_app(modified, out_dir)
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    with (out_dir / "skips.jsonl").open("w", encoding="utf-8") as fh:
        for entry in skips:
            fh.write(json.dumps(entry) + "\n")
    click.echo(f"injected {len(manifest.sites)} methods, "
               f"{len(skips)} skipped -> {out_dir}")


@main.command(name="ccc")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--w1", type=float, default=0.4, show_default=True)
@click.option("--w2", type=float, default=0.2, show_default=True)
@click.option("--w3", type=float, default=0.4, show_default=True)
@click.pass_obj
def ccc_command(obj: CliContext, manifest_path: Path, w1: float, w2: float, w3: float):
    """Score an injection manifest with the visibility metric."""
    try:
        manifest = InjectionManifest.from_json(
            manifest_path.read_text(encoding="utf-8"))
        weights = CccWeights(w1, w2, w3)
        report = ccc(manifest, weights)
    except (UndefinedMetricError, ValueError, KeyError) as exc:
        _fail_input(str(exc))
    if obj.fmt == "csv":
        _emit(obj, "c1,c2,c3,ccc\n"
              f"{report.c1:.6f},{report.c2:.6f},{report.c3:.6f},{report.ccc:.6f}\n")
    else:
        _emit(obj, report.to_json())


@main.command(name="gen-corpus")
@click.option("--apps-per-class", type=int, default=100, show_default=True)
@click.option("--methods-per-app", type=int, default=20, show_default=True)
@click.option("--classes-per-app", type=int, default=2, show_default=True)
@click.option("--min-instructions", type=int, default=12, show_default=True)
@click.option("--max-instructions", type=int, default=12, show_default=True)
@click.pass_obj
def gen_corpus(obj: CliContext, apps_per_class, methods_per_app, classes_per_app,
               min_instructions, max_instructions):
    """Generate the labeled synthetic corpus tree."""
    if obj.out is None:
        _fail_input("gen-corpus requires --out DIRECTORY (before the subcommand)")
    try:
        path = generate_corpus(
            obj.out, seed=obj.seed, apps_per_class=apps_per_class,
            methods_per_app=methods_per_app, classes_per_app=classes_per_app,
            method_instructions=(min_instructions, max_instructions),
            motif=MotifSpec(),
        )
    except InputError as exc:
        _fail_input(str(exc))
    click.echo(f"corpus written to {path}")


_MODEL_OPTIONS = [
    click.option("--max-len", type=int, default=256, show_default=True),
    click.option("--embedding-dim", type=int, default=8, show_default=True),
    click.option("--filters", type=int, default=32, show_default=True),
    click.option("--kernel-width", type=int, default=8, show_default=True),
    click.option("--hidden-dim", type=int, default=16, show_default=True),
]


def _model_options(fn):
    for opt in reversed(_MODEL_OPTIONS):
        fn = opt(fn)
    return fn


@main.command(name="train")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--epochs", type=int, default=40, show_default=True)
@click.option("--learning-rate", type=float, default=0.1, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@_model_options
@click.pass_obj
def train_command(obj: CliContext, corpus: Path, epochs, learning_rate, batch_size,
                  test_fraction, max_len, embedding_dim, filters, kernel_width,
                  hidden_dim):
    """Train the surrogate detector on a labeled corpus; saves a checkpoint."""
    if obj.out is None:
        _fail_input("train requires --out MODEL.npz (before the subcommand)")
    try:
        labeled = load_labeled_apps(corpus)
        train_set, test_set = split_corpus(labeled, test_fraction, seed=obj.seed)
        config = DetectorConfig(
            vocabulary_size=default_table().vocabulary_size,
            embedding_dim=embedding_dim, conv_filters=filters,
            kernel_width=kernel_width, hidden_dim=hidden_dim,
            max_len=max_len, seed=obj.seed,
        )
        seqs, labels = sequences_for(train_set, max_len=max_len)
        model = train(init_model(config), list(zip(seqs, labels)),
                      epochs=epochs, learning_rate=learning_rate,
                      batch_size=batch_size)
        save_model(model, obj.out)
        train_row = evaluate(model, list(zip(seqs, labels)), obj.threshold)
        result = {"model": str(obj.out), "train_accuracy": train_row.accuracy}
        if test_set:
            test_seqs, test_labels = sequences_for(test_set, max_len=max_len)
            test_row = evaluate(model, list(zip(test_seqs, test_labels)), obj.threshold)
            result["test_accuracy"] = test_row.accuracy
            result["test_recall"] = test_row.recall
    except InputError as exc:
        _fail_input(str(exc))
    click.echo(json.dumps(result, indent=2))


@main.command(name="eval")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_obj
def eval_command(obj: CliContext, corpus: Path, model_path: Path):
    """Score a trained model on a labeled corpus."""
    try:
        model = load_model(model_path)
        labeled = load_labeled_apps(corpus)
        seqs, labels = sequences_for(labeled, max_len=model.config.max_len)
        row = evaluate(model, list(zip(seqs, labels)), obj.threshold)
    except InputError as exc:
        _fail_input(str(exc))
    if obj.fmt == "csv":
        _emit(obj, metrics_to_csv({"eval": row}))
    else:
        _emit(obj, json.dumps(row.to_dict(), indent=2))
    if row.degenerate:
        sys.exit(EXIT_DEGENERATE)


@main.command(name="attack")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--variant", type=click.Choice([k.value for k in AttackKind]),
              required=True)
@click.option("--count", type=int, default=3, show_default=True)
@click.option("--x1", default="sub-int", show_default=True)
@click.option("--x2", default="xor-int", show_default=True)
@click.option("--budget", type=int, default=1, show_default=True)
@click.pass_obj
def attack_command(obj: CliContext, corpus: Path, model_path: Path, variant: str,
                   count: int, x1: str, x2: str, budget: int):
    """Attack the corpus's malware and report metrics plus mean CCC."""
    try:
        model = load_model(model_path)
        labeled = load_labeled_apps(corpus)
        outcome = run_attack_experiment(
            model, labeled, _variant_from_options(variant, count, x1, x2),
            threshold=obj.threshold, budget=budget,
        )
    except (InputError, EmptyTemplateError, EmptyManifestError) as exc:
        _fail_input(str(exc))
    result = {
        "variant": outcome.variant.value,
        "metrics": outcome.metrics.to_dict(),
        "mean_ccc": json.loads(outcome.mean_ccc.to_json()),
        "evaded_fraction": outcome.evaded_fraction,
        "skipped_methods": len(outcome.skips),
    }
    if obj.fmt == "csv":
        _emit(obj, metrics_to_csv({outcome.variant.value: outcome.metrics}))
    else:
        _emit(obj, json.dumps(result, indent=2))
    if outcome.metrics.degenerate:
        sys.exit(EXIT_DEGENERATE)


@main.command(name="sweep")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--lengths", default="2,4,8,16", show_default=True,
              help="Comma-separated increasing injected lengths.")
@click.pass_obj
def sweep_command(obj: CliContext, corpus: Path, model_path: Path, lengths: str):
    """Injected-length sweep: mean CCC and recall per length."""
    try:
        parsed = [int(tok) for tok in lengths.split(",") if tok.strip()]
        model = load_model(model_path)
        labeled = load_labeled_apps(corpus)
        rows = run_sweep(model, labeled, parsed, threshold=obj.threshold)
    except (InputError, ValueError, EmptyManifestError) as exc:
        _fail_input(str(exc))
    rho = spearman([r.injected_length for r in rows], [r.recall for r in rows]) \
        if len(rows) >= 2 else 0.0
    if obj.fmt == "csv":
        _emit(obj, sweep_to_csv(rows))
    else:
        _emit(obj, json.dumps(
            {"rows": json.loads(sweep_to_json(rows)), "spearman_length_recall": rho,
             "seed": obj.seed}, indent=2))


@main.command(name="verify")
@click.argument("original", type=click.Path(exists=True, path_type=Path))
@click.argument("modified", type=click.Path(exists=True, path_type=Path))
@click.option("--trials", type=int, default=1000, show_default=True)
@click.pass_obj
def verify_command(obj: CliContext, original: Path, modified: Path, trials: int):
    """Check behavioral equivalence of matching methods in two trees."""
    try:
        orig_classes = (load_app(original).classes if original.is_dir()
                        else (parse_class(original.read_text(encoding="utf-8")),))
        mod_classes = (load_app(modified).classes if modified.is_dir()
                       else (parse_class(modified.read_text(encoding="utf-8")),))
    except SmaliParseError as exc:
        _fail_input(str(exc))
    mod_methods = {
        (c.class_name, m.signature): m for c in mod_classes for m in c.methods
    }
    results = []
    for cls in orig_classes:
        for method in cls.methods:
            peer = mod_methods.get((cls.class_name, method.signature))
            if peer is None:
                continue
            res = check_equivalence(method, peer, trials=trials, seed=obj.seed)
            results.append({
                "class": cls.class_name,
                "method": method.signature,
                "verdict": res.verdict.value,
                "witness": list(res.witness) if res.witness else None,
                "detail": res.detail,
            })
    not_equal = sum(1 for r in results if r["verdict"] == Verdict.NOT_EQUAL.value)
    _emit(obj, json.dumps({"methods": results, "not_equal": not_equal}, indent=2))


if __name__ == "__main__":
    main()
