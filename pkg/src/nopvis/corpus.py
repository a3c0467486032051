"""Deterministic synthetic Smali corpus with planted malware motifs.

Apps are plain integer-arithmetic classes. Malware apps carry one
contiguous motif (a fixed opcode n-gram built around ``xor-int``, which
the benign instruction pool never emits), planted in a late method so
that entry-point injections can push it past the detector's sequence
horizon. Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .smali import SmaliApp, load_app, parse_class, save_app
from .validation import InputError

BENIGN_LABEL = 0
MALWARE_LABEL = 1

# Ops the benign generator draws from; disjoint from the motif signature.
_BENIGN_OPS = ("add-int", "sub-int", "mul-int", "and-int", "or-int")
_BENIGN_LIT_OPS = ("add-int/lit8", "mul-int/lit8")

DEFAULT_MOTIF_OPS = (
    "xor-int",
    "sub-int",
    "xor-int",
    "or-int",
    "xor-int",
    "and-int",
    "xor-int",
    "add-int",
)


@dataclass(frozen=True, slots=True)
class MotifSpec:
    """Where and what to plant in malware apps."""

    ops: tuple[str, ...] = DEFAULT_MOTIF_OPS
    method_lo: int = 12
    method_hi: int = 18

    def __post_init__(self):
        if not self.ops:
            raise ValueError("motif must have at least one opcode")
        if self.method_lo < 0 or self.method_hi < self.method_lo:
            raise ValueError("invalid motif method index range")


DEFAULT_MOTIF = MotifSpec()


def _method_text(name: str, locals_count: int, body_ops: list[str]) -> str:
    registers = locals_count + 2
    p0, p1 = f"v{registers - 2}", f"v{registers - 1}"
    lines = [
        f".method public static {name}(II)I",
        f"    .registers {registers}",
        f"    add-int v0, {p0}, {p1}",
    ]
    lines.extend(body_ops)
    lines.append("    return v0")
    lines.append(".end method")
    return "\n".join(lines)


def _gen_body(rng: np.random.Generator, locals_count: int, length: int,
              param_regs: tuple[str, str]) -> list[str]:
    """``length`` instructions after the opening add-int, before return."""
    locals_avail = [f"v{i}" for i in range(locals_count)]
    readable = list(locals_avail[:1]) + list(param_regs)
    ops: list[str] = []
    for _ in range(length):
        dst = locals_avail[int(rng.integers(len(locals_avail)))]
        kind = int(rng.integers(3))
        if kind == 0 and len(readable) >= 2:
            op = _BENIGN_OPS[int(rng.integers(len(_BENIGN_OPS)))]
            a = readable[int(rng.integers(len(readable)))]
            b = readable[int(rng.integers(len(readable)))]
            ops.append(f"    {op} {dst}, {a}, {b}")
        elif kind == 1:
            op = _BENIGN_LIT_OPS[int(rng.integers(len(_BENIGN_LIT_OPS)))]
            a = readable[int(rng.integers(len(readable)))]
            ops.append(f"    {op} {dst}, {a}, {int(rng.integers(1, 64))}")
        else:
            ops.append(f"    const/16 {dst}, {int(rng.integers(0, 512))}")
        if dst not in readable:
            readable.append(dst)
    return ops


def _plant_motif(body: list[str], motif: MotifSpec, offset: int,
                 param_regs: tuple[str, str]) -> list[str]:
    p0, p1 = param_regs
    replaced = list(body)
    for i, op in enumerate(motif.ops):
        replaced[offset + i] = f"    {op} v0, {p0}, {p1}"
    return replaced


def generate_app(
    rng: np.random.Generator,
    app_id: str,
    label: int,
    methods_per_app: int = 20,
    classes_per_app: int = 2,
    method_instructions: tuple[int, int] = (12, 12),
    motif: MotifSpec = DEFAULT_MOTIF,
) -> SmaliApp:
    """One synthetic app; malware apps get exactly one planted motif."""
    lo, hi = method_instructions
    if hi < lo or lo < len(motif.ops) + 2:
        raise InputError("method_instructions too small for the motif")
    if motif.method_hi >= methods_per_app and label == MALWARE_LABEL:
        raise InputError("motif method index exceeds methods_per_app")

    motif_method = -1
    if label == MALWARE_LABEL:
        motif_method = int(rng.integers(motif.method_lo, motif.method_hi + 1))

    method_texts = []
    for m_idx in range(methods_per_app):
        locals_count = int(rng.integers(2, 4))
        registers = locals_count + 2
        params = (f"v{registers - 2}", f"v{registers - 1}")
        length = int(rng.integers(lo, hi + 1)) - 2  # minus opening op and return
        body = _gen_body(rng, locals_count, length, params)
        if m_idx == motif_method:
            offset = int(rng.integers(0, length - len(motif.ops) + 1))
            body = _plant_motif(body, motif, offset, params)
        method_texts.append(_method_text(f"m{m_idx:03d}", locals_count, body))

    per_class = max(1, methods_per_app // classes_per_app)
    classes = []
    for c_idx in range(0, methods_per_app, per_class):
        chunk = method_texts[c_idx : c_idx + per_class]
        name = f"Lcom/gen/{app_id}/C{c_idx // per_class};"
        text = "\n".join(
            [f".class public {name}", ".super Ljava/lang/Object;", ""]
            + [t + "\n" for t in chunk]
        )
        classes.append(parse_class(text, source_name=f"C{c_idx // per_class}.smali"))
    return SmaliApp(app_id=app_id, classes=tuple(classes))


def generate_labeled_apps(
    seed: int,
    apps_per_class: int,
    methods_per_app: int = 20,
    classes_per_app: int = 2,
    method_instructions: tuple[int, int] = (12, 12),
    motif: MotifSpec = DEFAULT_MOTIF,
) -> list[tuple[SmaliApp, int]]:
    """In-memory corpus: ``apps_per_class`` benign + as many malware."""
    if apps_per_class < 1:
        raise InputError("apps_per_class must be >= 1 (empty corpus)")
    rng = np.random.default_rng(seed)
    out = []
    for label, prefix in ((BENIGN_LABEL, "benign"), (MALWARE_LABEL, "malware")):
        for i in range(apps_per_class):
            app_id = f"{prefix}_{i:04d}"
            out.append(
                (
                    generate_app(
                        rng, app_id, label,
                        methods_per_app=methods_per_app,
                        classes_per_app=classes_per_app,
                        method_instructions=method_instructions,
                        motif=motif,
                    ),
                    label,
                )
            )
    return out


def generate_corpus(
    out_dir: str | Path,
    seed: int,
    apps_per_class: int,
    methods_per_app: int = 20,
    classes_per_app: int = 2,
    method_instructions: tuple[int, int] = (12, 12),
    motif: MotifSpec = DEFAULT_MOTIF,
) -> Path:
    """Write a labeled corpus tree: <out>/{benign,malware}/<app_id>/*.smali."""
    out_dir = Path(out_dir)
    labeled = generate_labeled_apps(
        seed, apps_per_class, methods_per_app, classes_per_app,
        method_instructions, motif,
    )
    for app, label in labeled:
        sub = "malware" if label == MALWARE_LABEL else "benign"
        save_app(app, out_dir / sub / app.app_id)
    meta = {
        "generator_version": 1,
        "seed": seed,
        "apps_per_class": apps_per_class,
        "methods_per_app": methods_per_app,
        "classes_per_app": classes_per_app,
        "method_instructions": list(method_instructions),
        "motif_ops": list(motif.ops),
        "motif_method_range": [motif.method_lo, motif.method_hi],
    }
    (out_dir / "corpus.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return out_dir


def load_labeled_apps(corpus_dir: str | Path) -> list[tuple[SmaliApp, int]]:
    """Read a corpus tree back; labels come from the benign/malware dirs."""
    corpus_dir = Path(corpus_dir)
    out: list[tuple[SmaliApp, int]] = []
    for sub, label in (("benign", BENIGN_LABEL), ("malware", MALWARE_LABEL)):
        base = corpus_dir / sub
        if not base.is_dir():
            continue
        for app_dir in sorted(p for p in base.iterdir() if p.is_dir()):
            out.append((load_app(app_dir), label))
    if not out:
        raise InputError(f"no benign/ or malware/ app directories under {corpus_dir}")
    return out


def load_labeled_sequences(corpus_dir: str | Path) -> list[tuple[str, list[int], int]]:
    """Opcode-sequence corpus: one ``*.seq.json`` per app."""
    corpus_dir = Path(corpus_dir)
    out = []
    for path in sorted(corpus_dir.rglob("*.seq.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        out.append((str(data.get("app_id", path.stem)), list(data["ids"]),
                    int(data["label"])))
    if not out:
        raise InputError(f"no *.seq.json files under {corpus_dir}")
    return out
