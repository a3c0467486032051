"""The three code-injection attacks and their bookkeeping.

* simple NOP: literal ``nop`` lines placed inside the method body.
* simple opcode (SIO): ``const, const, x, x`` at method entry, where the
  x instructions are whitelist arithmetic ops writing only scratch or
  dead registers.
* impossible if (IMI): ``const, if-eqz, x, x`` guarded block whose
  results are dead on arrival; the guard constant is 1, so execution
  falls through the block and the original code overwrites everything the
  block produced.

All three preserve the host's observable behavior, which the
mini-interpreter verifies. Every injection returns the modified method
plus an :class:`InjectionSite` describing exactly what was added, so the
visibility metric sees precise counts.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .smali import (
    LineKind,
    SmaliApp,
    SmaliClass,
    SmaliLine,
    SmaliMethod,
    iter_methods,
    parse_line,
)
from .visibility import (
    ComplexityClass,
    ConnectionClass,
    InjectionManifest,
    InjectionSite,
    classify_complexity,
    classify_connection,
)

# Int arithmetic/logic ops that are safe payload candidates: no side
# effects, single destination register.
INJECTABLE_MNEMONICS: tuple[str, ...] = (
    "add-int",
    "sub-int",
    "mul-int",
    "xor-int",
    "and-int",
    "or-int",
)

# Registers addressable by the short instruction formats.
REGISTER_CAP = 15

_INDENT = "    "


class InjectionSkip(Exception):
    """A method could not be injected; carries the reason."""


class EmptyManifestError(ValueError):
    """An attack plan selected no methods."""


class AttackKind(enum.Enum):
    SIMPLE_NOP = "nop"
    SIO = "sio"
    IMI = "imi"


@dataclass(frozen=True, slots=True)
class AttackVariant:
    """Which attack to run and its payload parameters."""

    kind: AttackKind
    payload_opcodes: tuple[str, str] = ("sub-int", "xor-int")
    nop_count: int = 3
    payload_length: int | None = None

    def __post_init__(self):
        if self.nop_count < 1:
            raise ValueError("nop_count must be >= 1")
        for m in self.payload_opcodes:
            if m not in INJECTABLE_MNEMONICS:
                raise ValueError(f"{m!r} is not an injectable candidate")
        if self.payload_length is not None and self.payload_length < 1:
            raise ValueError("payload_length must be >= 1")


class Placement(enum.Enum):
    METHOD_ENTRY = "method_entry"


@dataclass(frozen=True, slots=True)
class MethodSelector:
    """Which methods a plan touches; everything with a body by default."""

    max_registers: int | None = None
    horizon: int | None = 8192

    def selects(self, method: SmaliMethod) -> bool:
        if not method.has_body:
            return False
        if self.max_registers is not None and method.registers_declared > self.max_registers:
            return False
        return True


@dataclass(frozen=True, slots=True)
class InjectionPlan:
    variant: AttackVariant
    selector: MethodSelector = MethodSelector()
    placement: Placement = Placement.METHOD_ENTRY


@dataclass(frozen=True, slots=True)
class ScratchPlan:
    """Register choices for one SIO/IMI site, shared with the optimizer."""

    primary: str
    secondary: str | None
    registers_added: int

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.primary,) if self.secondary is None else (self.primary, self.secondary)


def dead_at_entry_registers(method: SmaliMethod) -> list[str]:
    """v-registers provably written before any read, scanning linearly.

    The scan stops at the first label or branch: past that point linear
    order no longer implies execution order, so nothing further is
    claimed. Parameters are never dead.
    """
    params = set(method.param_registers)
    seen_read: set[str] = set()
    dead: list[str] = []
    for ln in method.lines:
        if ln.kind is LineKind.LABEL:
            break
        if not ln.is_instruction():
            continue
        if ln.branch_target is not None:
            break
        for reg in sorted(ln.registers_written, key=_register_index):
            if (
                reg.startswith("v")
                and reg not in params
                and reg not in seen_read
                and reg not in ln.registers_read
                and reg not in dead
            ):
                dead.append(reg)
        seen_read |= ln.registers_read
    return dead


def _register_index(reg: str) -> int:
    return int(reg[1:]) if reg[1:].isdigit() else 0


def plan_scratch(
    method: SmaliMethod, need_pair: bool, register_cap: int = REGISTER_CAP
) -> ScratchPlan:
    """Pick scratch registers for an injection, bumping the frame as needed.

    Prefers a dead original register as the primary (destination) slot,
    then takes fresh indices above the declared count. Fresh indices above
    ``register_cap`` are not addressable by the short formats, so the
    method is skipped instead of remapped.
    """
    dead = dead_at_entry_registers(method)
    fresh_base = method.registers_declared
    added = 0

    if dead:
        primary = dead[0]
    else:
        primary = f"v{fresh_base + added}"
        added += 1
    secondary = None
    if need_pair:
        secondary = f"v{fresh_base + added}"
        added += 1

    highest = max(
        (_register_index(r) for r in (primary, secondary) if r is not None), default=0
    )
    if highest > register_cap:
        raise InjectionSkip(
            f"register budget exhausted: needs v{highest} above cap v{register_cap}"
        )
    return ScratchPlan(primary=primary, secondary=secondary, registers_added=added)


_REGISTERS_DIRECTIVE_RE = re.compile(r"^(\s*\.registers\s+)(\d+)(.*)$")


def _bump_registers_directive(lines: list[SmaliLine], added: int) -> tuple[list[SmaliLine], tuple[tuple[int, str], ...]]:
    if added == 0:
        return lines, ()
    for i, ln in enumerate(lines):
        m = _REGISTERS_DIRECTIVE_RE.match(ln.raw)
        if m:
            new_raw = f"{m.group(1)}{int(m.group(2)) + added}{m.group(3)}"
            rewritten = ((i, ln.raw),)
            return lines[:i] + [parse_line(new_raw)] + lines[i + 1 :], rewritten
    # No .registers directive: synthesize one after the header.
    new_line = parse_line(f"{_INDENT}.registers {added}")
    return lines[:1] + [new_line] + lines[1:], ()


def _rebuild_method(method: SmaliMethod, lines: list[SmaliLine], registers_added: int) -> SmaliMethod:
    return SmaliMethod(
        name=method.name,
        descriptor=method.descriptor,
        flags=method.flags,
        registers_declared=method.registers_declared + registers_added,
        lines=tuple(lines),
        trailing=method.trailing,
        param_registers=method.param_registers,
    )


def _require_body(method: SmaliMethod) -> None:
    if not method.has_body:
        raise InjectionSkip(f"method {method.signature} has no body")


def _instr(text: str) -> SmaliLine:
    return parse_line(_INDENT + text)


def fresh_label(method: SmaliMethod, base: str = ":impossible") -> str:
    existing = {ln.label for ln in method.lines if ln.kind is LineKind.LABEL}
    if base not in existing:
        return base
    k = 2
    while f"{base}_{k}" in existing:
        k += 1
    return f"{base}_{k}"


def inject_simple_nop(
    method: SmaliMethod, count: int = 3, class_name: str = ""
) -> tuple[SmaliMethod, InjectionSite]:
    """Insert ``count`` literal nop lines after the first instruction."""
    _require_body(method)
    if count < 1:
        raise ValueError("count must be >= 1")
    lines = list(method.lines)
    first_instr = next(i for i, ln in enumerate(lines) if ln.is_instruction())
    at = first_instr if (lines[first_instr].opcode or "").startswith("return") else first_instr + 1
    block = [_instr("nop") for _ in range(count)]
    new_lines = lines[:at] + block + lines[at:]
    site = InjectionSite(
        method_ref=(class_name, method.signature),
        injected_instruction_count=count,
        original_instruction_count=method.instruction_count,
        contains_explicit_nop=True,
        complexity=ComplexityClass.STRAIGHT_LINE,
        connection=ConnectionClass.NO_ATTACHMENT,
        injected_line_spans=((at, at + count),),
    )
    return _rebuild_method(method, new_lines, 0), site


def sio_block_lines(plan: ScratchPlan, payload: tuple[str, ...]) -> list[SmaliLine]:
    a, b = plan.primary, plan.secondary
    lines = [_instr(f"const {a}, 0x8")]
    if b is not None:
        lines.append(_instr(f"const {b}, 0xA"))
    for op in payload:
        lines.append(_instr(f"{op} {a}, {a}, {b or a}"))
    return lines


def inject_sio(
    method: SmaliMethod,
    x1: str = "sub-int",
    x2: str = "xor-int",
    class_name: str = "",
    register_cap: int = REGISTER_CAP,
    payload: tuple[str, ...] | None = None,
) -> tuple[SmaliMethod, InjectionSite]:
    """Straight-line block at method entry: const, const, x1, x2.

    Destinations are scratch or dead-at-entry registers, so the host's
    input/output behavior is untouched. ``payload`` overrides the default
    two x instructions (used by sweep runs with longer blocks); an empty
    payload leaves just the two const loads.
    """
    _require_body(method)
    if payload is None:
        payload = (x1, x2)
    for m in payload:
        if m not in INJECTABLE_MNEMONICS:
            raise ValueError(f"{m!r} is not an injectable candidate")
    plan = plan_scratch(method, need_pair=True, register_cap=register_cap)
    block = sio_block_lines(plan, payload)

    lines = list(method.lines)
    lines, rewritten = _bump_registers_directive(lines, plan.registers_added)
    entry = _rebuild_method(method, lines, 0).body_entry_index()
    new_lines = lines[:entry] + block + lines[entry:]

    modified = _rebuild_method(method, new_lines, plan.registers_added)
    site = InjectionSite(
        method_ref=(class_name, method.signature),
        injected_instruction_count=len(block),
        original_instruction_count=method.instruction_count,
        contains_explicit_nop=False,
        complexity=classify_complexity(block, host_method_name=method.name),
        connection=classify_connection(
            block, method, frame_registers=modified.registers_declared
        ),
        injected_line_spans=((entry, entry + len(block)),),
        registers_added=plan.registers_added,
        rewritten_lines=rewritten,
    )
    return modified, site


def inject_imi(
    method: SmaliMethod,
    x1: str = "sub-int",
    x2: str = "xor-int",
    class_name: str = "",
    register_cap: int = REGISTER_CAP,
) -> tuple[SmaliMethod, InjectionSite]:
    """Guarded dead block at method entry: const 1, if-eqz, x1, x2, label.

    The guard loads 1, so the branch never fires and the block always
    executes; every register it writes is scratch or rewritten by the
    original code before any original read.
    """
    _require_body(method)
    for m in (x1, x2):
        if m not in INJECTABLE_MNEMONICS:
            raise ValueError(f"{m!r} is not an injectable candidate")
    plan = plan_scratch(method, need_pair=False, register_cap=register_cap)
    guard = plan.primary
    label = fresh_label(method)

    operands = list(method.param_registers[:2])
    while len(operands) < 2:
        operands.append(guard)
    a, b = operands

    block = [
        _instr(f"const {guard}, 0x1"),
        _instr(f"if-eqz {guard}, {label}"),
        _instr(f"{x1} {guard}, {a}, {b}"),
        _instr(f"{x2} {guard}, {a}, {b}"),
        parse_line(f"{_INDENT}{label}"),
    ]

    lines = list(method.lines)
    lines, rewritten = _bump_registers_directive(lines, plan.registers_added)
    entry = _rebuild_method(method, lines, 0).body_entry_index()
    new_lines = lines[:entry] + block + lines[entry:]

    modified = _rebuild_method(method, new_lines, plan.registers_added)
    site = InjectionSite(
        method_ref=(class_name, method.signature),
        injected_instruction_count=sum(1 for ln in block if ln.is_instruction()),
        original_instruction_count=method.instruction_count,
        contains_explicit_nop=False,
        complexity=classify_complexity(block, host_method_name=method.name),
        connection=classify_connection(
            block, method, frame_registers=modified.registers_declared
        ),
        injected_line_spans=((entry, entry + len(block)),),
        registers_added=plan.registers_added,
        rewritten_lines=rewritten,
    )
    return modified, site


def inject_method(
    method: SmaliMethod, variant: AttackVariant, class_name: str = ""
) -> tuple[SmaliMethod, InjectionSite]:
    """Dispatch one method injection according to the attack variant."""
    if variant.kind is AttackKind.SIMPLE_NOP:
        return inject_simple_nop(method, count=variant.nop_count, class_name=class_name)
    if variant.kind is AttackKind.SIO:
        payload = None
        if variant.payload_length is not None:
            payload = straightline_payload(variant)
        x1, x2 = variant.payload_opcodes
        return inject_sio(method, x1, x2, class_name=class_name, payload=payload)
    x1, x2 = variant.payload_opcodes
    return inject_imi(method, x1, x2, class_name=class_name)


def straightline_payload(variant: AttackVariant) -> tuple[str, ...]:
    """Payload ops for a generalized SIO block of ``payload_length`` lines.

    Two const loads come first; the remainder alternates the variant's
    payload opcodes. A length below 3 leaves const loads only.
    """
    total = variant.payload_length or 4
    extra = max(total - 2, 0)
    x1, x2 = variant.payload_opcodes
    return tuple((x1 if i % 2 == 0 else x2) for i in range(extra))


def method_sequence_spans(
    app: SmaliApp | list[SmaliClass], table=None, max_len: int = 8192
):
    """Yield (class, method, start_index) in extraction order, pre-injection."""
    from .smali import method_opcode_ids
    from .opcodes import default_table

    table = table or default_table()
    pos = 0
    first = True
    for cls, method in iter_methods(app):
        if not first:
            pos += 1
        first = False
        yield cls, method, pos
        pos += len(method_opcode_ids(method, table))


def apply_attack(
    app: SmaliApp | list[SmaliClass],
    plan: InjectionPlan,
    app_id: str | None = None,
    skip_log: list[dict] | None = None,
) -> tuple[SmaliApp, InjectionManifest]:
    """Inject every selected method of an app; returns the modified app
    and the manifest covering exactly the injected sites.

    Methods the plan skips (no body, register budget, beyond the horizon)
    are recorded in ``skip_log`` when given. Raises
    :class:`EmptyManifestError` when nothing was injected.
    """
    classes = app.classes if isinstance(app, SmaliApp) else tuple(app)
    the_id = app_id or (app.app_id if isinstance(app, SmaliApp) else "")

    horizon_start: dict[tuple[str, str], int] = {}
    for cls, method, start in method_sequence_spans(classes):
        horizon_start[(cls.class_name, method.signature)] = start

    sites: list[InjectionSite] = []
    new_classes: list[SmaliClass] = []
    for cls in classes:
        new_methods = []
        for method in cls.methods:
            key = (cls.class_name, method.signature)
            beyond = (
                plan.selector.horizon is not None
                and horizon_start.get(key, 0) >= plan.selector.horizon
            )
            if not plan.selector.selects(method) or beyond:
                if skip_log is not None:
                    reason = "beyond horizon" if beyond else "not selected (no body or filtered)"
                    skip_log.append(
                        {"app_id": the_id, "class": cls.class_name,
                         "method": method.signature, "reason": reason}
                    )
                new_methods.append(method)
                continue
            try:
                modified, site = inject_method(method, plan.variant, class_name=cls.class_name)
            except InjectionSkip as skip:
                if skip_log is not None:
                    skip_log.append(
                        {"app_id": the_id, "class": cls.class_name,
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

    if not sites:
        raise EmptyManifestError("empty manifest: plan selected no methods")
    modified_app = SmaliApp(app_id=the_id, classes=tuple(new_classes))
    return modified_app, InjectionManifest(app_id=the_id, sites=tuple(sites))


def strip_injection(method: SmaliMethod, site: InjectionSite) -> SmaliMethod:
    """Undo one injection using the site's spans and rewrites."""
    lines = list(method.lines)
    for idx, original_raw in site.rewritten_lines:
        lines[idx] = parse_line(original_raw)
    drop: set[int] = set()
    for start, end in site.injected_line_spans:
        drop.update(range(start, end))
    lines = [ln for i, ln in enumerate(lines) if i not in drop]
    return _rebuild_method(method, lines, -site.registers_added)


def derive_manifest(
    original: SmaliApp | list[SmaliClass],
    modified: SmaliApp | list[SmaliClass],
    app_id: str | None = None,
) -> InjectionManifest:
    """Recover a manifest by diffing a modified app against its original.

    Methods are matched by (class, signature); inserted lines are found
    with a sequence diff over raw lines; each modified method becomes one
    site whose snippet is classified automatically.
    """
    import difflib

    orig_classes = original.classes if isinstance(original, SmaliApp) else tuple(original)
    mod_classes = modified.classes if isinstance(modified, SmaliApp) else tuple(modified)
    the_id = app_id or (modified.app_id if isinstance(modified, SmaliApp) else "")

    orig_methods = {
        (c.class_name, m.signature): m for c in orig_classes for m in c.methods
    }

    def body(method):
        # Directives and comments are noise for the diff; the injected
        # snippet is an insertion among instruction and label lines.
        return [
            (i, ln)
            for i, ln in enumerate(method.lines)
            if ln.kind in (LineKind.INSTRUCTION, LineKind.LABEL)
        ]

    sites: list[InjectionSite] = []
    for cls in mod_classes:
        for method in cls.methods:
            key = (cls.class_name, method.signature)
            host = orig_methods.get(key)
            if host is None:
                continue
            old_body = body(host)
            new_body = body(method)
            matcher = difflib.SequenceMatcher(
                a=[ln.raw.strip() for _, ln in old_body],
                b=[ln.raw.strip() for _, ln in new_body],
                autojunk=False,
            )
            spans = []
            snippet: list[SmaliLine] = []
            for tag, _, _, j1, j2 in matcher.get_opcodes():
                if tag == "insert":
                    spans.append((new_body[j1][0], new_body[j2 - 1][0] + 1))
                    snippet.extend(ln for _, ln in new_body[j1:j2])
            l_count = sum(1 for ln in snippet if ln.is_instruction())
            if l_count == 0:
                continue
            sites.append(
                InjectionSite(
                    method_ref=key,
                    injected_instruction_count=l_count,
                    original_instruction_count=host.instruction_count,
                    contains_explicit_nop=any(ln.opcode == "nop" for ln in snippet),
                    complexity=classify_complexity(snippet, host_method_name=host.name),
                    connection=classify_connection(
                        snippet, host, frame_registers=method.registers_declared
                    ),
                    injected_line_spans=tuple(spans),
                )
            )
    return InjectionManifest(app_id=the_id, sites=tuple(sites))
