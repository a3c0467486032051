"""Feature-space placeholder optimization and its problem-space realization.

The attack splices an injection pattern's opcode ids at each injectable
method's entry position in the extracted sequence (opcode shifting), then
greedily picks concrete opcodes for the placeholder slots so the malware
score drops, and finally realizes the winning assignment with the
injector. Candidate opcodes come from the injector whitelist, so every
feature-space solution is realizable, and re-extracting the realized app
reproduces the optimized sequence exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import DetectorModel, forward_batch
from .inject import (
    AttackKind,
    AttackVariant,
    InjectionSkip,
    INJECTABLE_MNEMONICS,
    inject_imi,
    inject_sio,
    plan_scratch,
    straightline_payload,
)
from .opcodes import OpcodeTable, default_table
from .smali import SmaliApp, SmaliClass, iter_methods, method_opcode_ids
from .validation import InputError, as_id_matrix, check_fitted
from .visibility import InjectionManifest

PLACEHOLDER = -1


class EmptyTemplateError(ValueError):
    """No injectable method fell inside the sequence horizon."""


@dataclass(frozen=True, slots=True)
class TemplateSite:
    """One method's pattern splice inside the shifted sequence."""

    class_name: str
    method_signature: str
    entry_index: int
    placeholder_positions: tuple[int, ...]
    scratch_registers: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class AttackTemplate:
    """Shifted opcode sequence with sentinel (-1) placeholder slots."""

    app_id: str
    kind: AttackKind
    ids: tuple[int, ...]
    placeholder_positions: tuple[int, ...]
    sites: tuple[TemplateSite, ...]
    max_len: int
    payload_length: int

    def with_assignment(self, assignment: dict[int, int]) -> tuple[int, ...]:
        """Template ids with placeholders substituted."""
        out = list(self.ids)
        for pos in self.placeholder_positions:
            if pos not in assignment:
                raise InputError(f"assignment missing placeholder at {pos}")
            out[pos] = assignment[pos]
        return tuple(out)


def pattern_ids(variant: AttackVariant, table: OpcodeTable) -> list[int]:
    """Fixed + placeholder ids the variant splices at a method entry."""
    const_id = table.id_of("const")
    if variant.kind is AttackKind.SIO:
        if variant.payload_length is not None and variant.payload_length < 2:
            raise ValueError("SIO patterns start with two const loads; length >= 2")
        n_payload = len(straightline_payload(variant)) if variant.payload_length else 2
        return [const_id, const_id] + [PLACEHOLDER] * n_payload
    if variant.kind is AttackKind.IMI:
        return [const_id, table.id_of("if-eqz"), PLACEHOLDER, PLACEHOLDER]
    raise ValueError("simple NOP injections have no placeholders to optimize")


def build_attack_template(
    app: SmaliApp | list[SmaliClass],
    variant: AttackVariant,
    table: OpcodeTable | None = None,
    max_len: int = 8192,
) -> AttackTemplate:
    """Splice the pattern at every injectable method entry, then truncate.

    A method is injectable when the injector can place scratch registers
    for it and its (shifted) entry still leaves room for the whole
    pattern before ``max_len``. Later methods keep shifting right, so the
    horizon naturally cuts the tail.
    """
    table = table or default_table()
    if variant.kind is AttackKind.SIMPLE_NOP:
        raise ValueError("template building applies to SIO/IMI attacks")
    splice = pattern_ids(variant, table)

    ids: list[int] = []
    sites: list[TemplateSite] = []
    placeholders: list[int] = []
    first = True
    for cls, method in iter_methods(app):
        if not first:
            ids.append(table.padding_id)
        first = False
        entry = len(ids)
        injectable = method.has_body and entry + len(splice) <= max_len
        scratch: tuple[str, ...] = ()
        if injectable:
            try:
                plan = plan_scratch(method, need_pair=variant.kind is AttackKind.SIO)
                scratch = plan.registers
            except InjectionSkip:
                injectable = False
        if injectable:
            ids.extend(splice)
            site_placeholders = tuple(
                entry + i for i, v in enumerate(splice) if v == PLACEHOLDER
            )
            placeholders.extend(site_placeholders)
            sites.append(
                TemplateSite(
                    class_name=cls.class_name,
                    method_signature=method.signature,
                    entry_index=entry,
                    placeholder_positions=site_placeholders,
                    scratch_registers=scratch,
                )
            )
        ids.extend(method_opcode_ids(method, table))

    ids = ids[:max_len]
    placeholders = [p for p in placeholders if p < max_len]
    sites_kept = tuple(
        s for s in sites if all(p < max_len for p in s.placeholder_positions)
    )
    if not sites_kept:
        raise EmptyTemplateError("no injectable methods within the sequence horizon")
    app_id = app.app_id if isinstance(app, SmaliApp) else ""
    return AttackTemplate(
        app_id=app_id,
        kind=variant.kind,
        ids=tuple(ids),
        placeholder_positions=tuple(placeholders),
        sites=sites_kept,
        max_len=max_len,
        payload_length=variant.payload_length or 4,
    )


@dataclass(frozen=True, slots=True)
class TraceStep:
    position: int
    opcode_id: int
    score_after: float


@dataclass(frozen=True, slots=True)
class OptimizationTrace:
    """Accepted greedy steps; scores are nonincreasing by construction."""

    steps: tuple[TraceStep, ...]
    initial_score: float
    final_score: float
    evaded: bool

    def to_json_lines(self) -> str:
        import json

        lines = [
            json.dumps(
                {"initial": self.initial_score, "final": self.final_score,
                 "evaded": self.evaded}
            )
        ]
        lines.extend(
            json.dumps(
                {"position": s.position, "opcode_id": s.opcode_id,
                 "score": s.score_after}
            )
            for s in self.steps
        )
        return "\n".join(lines) + "\n"


def default_candidate_ids(table: OpcodeTable | None = None) -> tuple[int, ...]:
    table = table or default_table()
    return tuple(sorted(table.id_of(m) for m in INJECTABLE_MNEMONICS))


def optimize_placeholders(
    model: DetectorModel,
    template: AttackTemplate,
    candidate_ids: tuple[int, ...] | None = None,
    threshold: float = 0.5,
    budget: int = 1,
) -> tuple[dict[int, int], OptimizationTrace]:
    """Coordinate-wise greedy choice of placeholder opcodes.

    Visits placeholders in sequence order; per slot, evaluates every
    candidate and keeps the score minimizer (ties break to the lowest
    id), accepting only when the score does not increase. Stops early
    once p_malware drops under the threshold. ``budget`` bounds the
    number of sweeps.
    """
    table = default_table()
    candidates = tuple(sorted(candidate_ids or default_candidate_ids(table)))
    if not candidates:
        raise InputError("empty candidate set")
    if budget < 1:
        raise InputError("budget must be >= 1 sweep")

    work = np.array(template.ids, dtype=np.int64)
    assignment = {pos: candidates[0] for pos in template.placeholder_positions}
    for pos, cid in assignment.items():
        work[pos] = cid

    padded = as_id_matrix([work], model.config.max_len)
    score = float(forward_batch(model, padded)[0, 1])
    initial = score
    steps: list[TraceStep] = []

    done = score < threshold
    for _ in range(budget):
        if done:
            break
        improved = False
        for pos in template.placeholder_positions:
            batch = np.repeat(padded, len(candidates), axis=0)
            if pos < model.config.max_len:
                batch[:, pos] = candidates
            probs = forward_batch(model, batch)[:, 1]
            best = int(np.argmin(probs))
            best_score = float(probs[best])
            if best_score <= score:
                if candidates[best] != assignment[pos] or best_score < score:
                    improved = True
                assignment[pos] = candidates[best]
                padded[0, pos] = candidates[best]
                score = best_score
                steps.append(TraceStep(pos, candidates[best], score))
            if score < threshold:
                done = True
                break
        if not improved:
            break

    trace = OptimizationTrace(
        steps=tuple(steps),
        initial_score=initial,
        final_score=score,
        evaded=score < threshold,
    )
    return assignment, trace


def realize(
    app: SmaliApp | list[SmaliClass],
    template: AttackTemplate,
    assignment: dict[int, int],
    table: OpcodeTable | None = None,
    skip_log: list[dict] | None = None,
) -> tuple[SmaliApp, InjectionManifest]:
    """Inject the assigned opcodes so the modified app re-extracts to the
    optimized sequence (up to any skipped methods, which are logged)."""
    table = table or default_table()
    classes = app.classes if isinstance(app, SmaliApp) else tuple(app)
    app_id = template.app_id or (app.app_id if isinstance(app, SmaliApp) else "")

    by_method: dict[tuple[str, str], TemplateSite] = {
        (s.class_name, s.method_signature): s for s in template.sites
    }

    sites = []
    new_classes = []
    for cls in classes:
        new_methods = []
        for method in cls.methods:
            tsite = by_method.get((cls.class_name, method.signature))
            if tsite is None:
                new_methods.append(method)
                continue
            mnemonics = []
            for pos in tsite.placeholder_positions:
                if pos not in assignment:
                    raise InputError(f"assignment missing placeholder at {pos}")
                name = table.mnemonic_of(assignment[pos])
                if name is None or name not in INJECTABLE_MNEMONICS:
                    raise InputError(f"opcode id {assignment[pos]} is not realizable")
                mnemonics.append(name)
            try:
                if template.kind is AttackKind.SIO:
                    modified, site = inject_sio(
                        method, class_name=cls.class_name, payload=tuple(mnemonics)
                    )
                else:
                    x1, x2 = (mnemonics + ["sub-int", "xor-int"])[:2]
                    modified, site = inject_imi(method, x1, x2, class_name=cls.class_name)
            except InjectionSkip as skip:
                if skip_log is not None:
                    skip_log.append(
                        {"app_id": app_id, "class": cls.class_name,
                         "method": method.signature, "reason": str(skip)}
                    )
                new_methods.append(method)
                continue
            new_methods.append(modified)
            sites.append(site)
        new_classes.append(
            SmaliClass(
                class_name=cls.class_name,
                super_name=cls.super_name,
                methods=tuple(new_methods),
                preamble=cls.preamble,
                source_name=cls.source_name,
                diagnostics=cls.diagnostics,
            )
        )

    modified_app = SmaliApp(app_id=app_id, classes=tuple(new_classes))
    return modified_app, InjectionManifest(app_id=app_id, sites=tuple(sites))


class GreedyEvasionAttack:
    """Estimator-style wrapper: bind a trained model, then transform apps.

    ``fit`` takes the detector under attack; ``transform`` maps each app
    to its realized adversarial version, recording ``manifests_`` and
    ``traces_`` side outputs.
    """

    def __init__(
        self,
        variant: AttackVariant | None = None,
        threshold: float = 0.5,
        budget: int = 1,
        candidate_ids: tuple[int, ...] | None = None,
    ):
        self.variant = variant
        self.threshold = threshold
        self.budget = budget
        self.candidate_ids = candidate_ids

    def get_params(self, deep: bool = True) -> dict:
        return {
            "variant": self.variant,
            "threshold": self.threshold,
            "budget": self.budget,
            "candidate_ids": self.candidate_ids,
        }

    def set_params(self, **params) -> "GreedyEvasionAttack":
        for name, value in params.items():
            if name not in self.get_params():
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def fit(self, model: DetectorModel, y=None) -> "GreedyEvasionAttack":
        self.model_ = model
        return self

    def transform(self, apps: list[SmaliApp]) -> list[SmaliApp]:
        check_fitted(self, "model_")
        variant = self.variant or AttackVariant(kind=AttackKind.SIO)
        out = []
        self.manifests_: list[InjectionManifest] = []
        self.traces_: list[OptimizationTrace] = []
        for app in apps:
            template = build_attack_template(
                app, variant, max_len=self.model_.config.max_len
            )
            assignment, trace = optimize_placeholders(
                self.model_, template, self.candidate_ids,
                threshold=self.threshold, budget=self.budget,
            )
            modified, manifest = realize(app, template, assignment)
            out.append(modified)
            self.manifests_.append(manifest)
            self.traces_.append(trace)
        return out
