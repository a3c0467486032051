"""End-to-end experiments: detector metrics, attack runs, and length sweeps."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .attack import build_attack_template, optimize_placeholders, realize
from .detector import DetectorModel, forward_batch
from .inject import AttackKind, AttackVariant, InjectionPlan, MethodSelector, apply_attack
from .opcodes import default_table
from .smali import SmaliApp, extract_opcode_sequence
from .validation import InputError, as_id_matrix
from .visibility import CccReport, CccWeights, DEFAULT_WEIGHTS, ccc, mean_report

METRICS_CSV_HEADER = "# nopvis metrics v1"
SWEEP_CSV_HEADER = "# nopvis sweep v1"


@dataclass(frozen=True, slots=True)
class MetricsRow:
    """Confusion-matrix metrics with an explicit division-by-zero policy.

    Undefined ratios are reported as 0.0 and the metric's name lands in
    ``degenerate`` so downstream tooling can flag it (CLI exit code 3).
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    degenerate: tuple[str, ...] = ()

    @classmethod
    def from_confusion(cls, tp: int, fp: int, tn: int, fn: int) -> "MetricsRow":
        total = tp + fp + tn + fn
        if total == 0:
            raise InputError("empty corpus: no predictions to score")
        degenerate = []
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            degenerate.append("precision")
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            degenerate.append("recall")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            degenerate.append("f1")
        return cls(
            accuracy=(tp + tn) / total,
            precision=precision,
            recall=recall,
            f1=f1,
            tp=tp, fp=fp, tn=tn, fn=fn,
            degenerate=tuple(degenerate),
        )

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "degenerate": list(self.degenerate),
        }


@dataclass(frozen=True, slots=True)
class SweepRow:
    injected_length: int
    mean_ccc: float
    recall: float

    def __post_init__(self):
        if not 0.0 <= self.mean_ccc <= 1.0:
            raise ValueError("mean_ccc outside [0, 1]")


def split_corpus(labeled, test_fraction: float = 0.2, seed: int = 0):
    """Stratified seeded shuffle split into (train, test) lists."""
    if not labeled:
        raise InputError("empty corpus")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in sorted({lab for _, lab in labeled}):
        group = [item for item in labeled if item[1] == label]
        order = rng.permutation(len(group))
        n_test = max(1, round(len(group) * test_fraction)) if len(group) > 1 else 0
        for rank, idx in enumerate(order):
            (test if rank < n_test else train).append(group[idx])
    return train, test


def sequences_for(apps_with_labels, table=None, max_len: int = 8192):
    table = table or default_table()
    seqs = [extract_opcode_sequence(app, table, max_len) for app, _ in apps_with_labels]
    labels = [label for _, label in apps_with_labels]
    return seqs, labels


def _predict(model: DetectorModel, seqs, threshold: float) -> np.ndarray:
    ids = as_id_matrix(seqs, model.config.max_len, model.config.vocabulary_size)
    probs = forward_batch(model, ids)
    return (probs[:, 1] >= threshold).astype(np.int64)


def evaluate(model: DetectorModel, labeled_seqs, threshold: float = 0.5) -> MetricsRow:
    """Confusion metrics of the model over (sequence, label) pairs."""
    if not labeled_seqs:
        raise InputError("empty corpus")
    seqs = [s for s, _ in labeled_seqs]
    labels = np.asarray([lab for _, lab in labeled_seqs], dtype=np.int64)
    preds = _predict(model, seqs, threshold)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    return MetricsRow.from_confusion(tp, fp, tn, fn)


@dataclass(frozen=True, slots=True)
class AttackOutcome:
    variant: AttackKind
    metrics: MetricsRow
    mean_ccc: CccReport
    evaded_fraction: float
    skips: tuple[dict, ...] = field(default=(), compare=False)


def _attack_one_app(model, app, variant, threshold, budget, skip_log):
    if variant.kind is AttackKind.SIMPLE_NOP:
        plan = InjectionPlan(
            variant=variant, selector=MethodSelector(horizon=model.config.max_len)
        )
        modified, manifest = apply_attack(app, plan, skip_log=skip_log)
        return modified, manifest
    template = build_attack_template(app, variant, max_len=model.config.max_len)
    assignment, _ = optimize_placeholders(
        model, template, threshold=threshold, budget=budget
    )
    return realize(app, template, assignment, skip_log=skip_log)


def run_attack_experiment(
    model: DetectorModel,
    labeled_apps: list[tuple[SmaliApp, int]],
    variant: AttackVariant,
    threshold: float = 0.5,
    budget: int = 1,
    weights: CccWeights = DEFAULT_WEIGHTS,
) -> AttackOutcome:
    """Attack every malicious app, rescore the corpus, average the CCC.

    Benign apps pass through untouched; SIO/IMI run the placeholder
    optimizer, simple NOP is pure injection. CCC is computed per app and
    averaged component-wise across attacked apps.
    """
    if not labeled_apps:
        raise InputError("empty corpus")
    table = default_table()
    max_len = model.config.max_len

    attacked_seqs = []
    reports: list[CccReport] = []
    skips: list[dict] = []
    evaded = 0
    n_malware = 0
    for app, label in labeled_apps:
        if label != 1:
            attacked_seqs.append((extract_opcode_sequence(app, table, max_len), label))
            continue
        n_malware += 1
        modified, manifest = _attack_one_app(
            model, app, variant, threshold, budget, skips
        )
        seq = extract_opcode_sequence(modified, table, max_len)
        attacked_seqs.append((seq, label))
        reports.append(ccc(manifest, weights))
        probs = forward_batch(model, as_id_matrix([seq], max_len))
        if probs[0, 1] < threshold:
            evaded += 1

    if n_malware == 0:
        raise InputError("corpus has no malicious apps to attack")
    metrics = evaluate(model, attacked_seqs, threshold)
    return AttackOutcome(
        variant=variant.kind,
        metrics=metrics,
        mean_ccc=mean_report(reports, weights),
        evaded_fraction=evaded / n_malware,
        skips=tuple(skips),
    )


def run_sweep(
    model: DetectorModel,
    labeled_apps: list[tuple[SmaliApp, int]],
    lengths: list[int],
    threshold: float = 0.5,
    weights: CccWeights = DEFAULT_WEIGHTS,
) -> list[SweepRow]:
    """Straight-line injection blocks of growing length per method.

    Each length runs the entry-point pattern with that many instructions
    (two const loads plus fixed whitelist arithmetic, no optimizer) on
    every malicious app, then reports the malware recall and the mean CCC.
    """
    if list(lengths) != sorted(lengths) or len(set(lengths)) != len(lengths):
        raise InputError("lengths must be strictly increasing")
    if any(length < 2 for length in lengths):
        raise InputError("sweep lengths must be >= 2 (const pair at minimum)")
    table = default_table()
    max_len = model.config.max_len
    malware = [(app, lab) for app, lab in labeled_apps if lab == 1]
    if not malware:
        raise InputError("corpus has no malicious apps to attack")

    rows = []
    for length in lengths:
        variant = AttackVariant(
            kind=AttackKind.SIO,
            payload_opcodes=("add-int", "or-int"),
            payload_length=length,
        )
        plan = InjectionPlan(variant=variant, selector=MethodSelector(horizon=max_len))
        seqs = []
        reports = []
        for app, label in malware:
            modified, manifest = apply_attack(app, plan)
            seqs.append((extract_opcode_sequence(modified, table, max_len), label))
            reports.append(ccc(manifest, weights))
        metrics = evaluate(model, seqs, threshold)
        rows.append(
            SweepRow(
                injected_length=length,
                mean_ccc=mean_report(reports, weights).ccc,
                recall=metrics.recall,
            )
        )
    return rows


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    def ranks(values):
        order = np.argsort(values, kind="stable")
        r = np.empty(len(values), dtype=float)
        i = 0
        sorted_vals = np.asarray(values, dtype=float)[order]
        while i < len(values):
            j = i
            while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
                j += 1
            r[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r

    if len(xs) != len(ys) or len(xs) < 2:
        raise InputError("need at least two paired observations")
    rx, ry = ranks(list(xs)), ranks(list(ys))
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


def metrics_to_csv(rows: dict[str, MetricsRow]) -> str:
    buf = io.StringIO()
    buf.write(METRICS_CSV_HEADER + "\n")
    writer = csv.writer(buf)
    writer.writerow(["name", "accuracy", "precision", "recall", "f1",
                     "tp", "fp", "tn", "fn", "degenerate"])
    for name, row in rows.items():
        writer.writerow([
            name, f"{row.accuracy:.6f}", f"{row.precision:.6f}",
            f"{row.recall:.6f}", f"{row.f1:.6f}",
            row.tp, row.fp, row.tn, row.fn, ";".join(row.degenerate),
        ])
    return buf.getvalue()


def sweep_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write(SWEEP_CSV_HEADER + "\n")
    writer = csv.writer(buf)
    writer.writerow(["injected_length", "mean_ccc", "recall"])
    for row in rows:
        writer.writerow([row.injected_length, f"{row.mean_ccc:.6f}", f"{row.recall:.6f}"])
    return buf.getvalue()


def sweep_to_json(rows: list[SweepRow]) -> str:
    return json.dumps(
        [
            {"injected_length": r.injected_length, "mean_ccc": r.mean_ccc,
             "recall": r.recall}
            for r in rows
        ],
        indent=2,
    )
