"""Line-oriented Smali parsing, serialization, and opcode-sequence extraction.

The parser is tolerant by design: unrecognized directives and mnemonics are
preserved verbatim rather than rejected, since real-world Smali dialects
vary. Every line of input is kept (order preserved), which makes
``parse_class`` / ``serialize_class`` a round-trip fixpoint.

Line taxonomy: a line is a comment iff its first non-whitespace character
is ``#``, a directive iff it is ``.``, a label iff it is ``:``, blank if
empty, and an instruction otherwise. Labels are their own kind and never
count toward instruction totals.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

from .opcodes import OpcodeTable, default_table, register_effects


class SmaliParseError(ValueError):
    """Structural parse failure (e.g. unterminated method)."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class LineKind(enum.Enum):
    COMMENT = "comment"
    DIRECTIVE = "directive"
    LABEL = "label"
    INSTRUCTION = "instruction"
    BLANK = "blank"


@dataclass(frozen=True, slots=True)
class SmaliLine:
    """One source line with its classification and register usage."""

    raw: str
    kind: LineKind
    opcode: str | None = None
    operands: tuple[str, ...] = ()
    registers_read: frozenset[str] = frozenset()
    registers_written: frozenset[str] = frozenset()
    label: str | None = None
    branch_target: str | None = None

    @property
    def registers(self) -> frozenset[str]:
        return self.registers_read | self.registers_written

    def is_instruction(self) -> bool:
        return self.kind is LineKind.INSTRUCTION


@dataclass(frozen=True, slots=True)
class SmaliMethod:
    """A ``.method`` .. ``.end method`` block, header and footer included.

    ``lines`` spans the whole block; ``trailing`` holds separator lines
    (blanks, comments) up to the next method so serialization is exact.
    ``param_registers`` is a derived hint (excluded from equality): the
    registers that receive arguments, ``pN`` names when the body uses
    them, otherwise the last-k slots implied by the ``.registers`` count.
    Injections that grow the frame keep the original hint, since demo
    style register names are absolute.
    """

    name: str
    descriptor: str
    flags: tuple[str, ...]
    registers_declared: int
    lines: tuple[SmaliLine, ...]
    trailing: tuple[SmaliLine, ...] = ()
    param_registers: tuple[str, ...] = field(default=(), compare=False)

    @property
    def instruction_count(self) -> int:
        return sum(1 for ln in self.lines if ln.is_instruction())

    @property
    def instructions(self) -> tuple[SmaliLine, ...]:
        return tuple(ln for ln in self.lines if ln.is_instruction())

    @property
    def is_static(self) -> bool:
        return "static" in self.flags

    @property
    def has_body(self) -> bool:
        if "abstract" in self.flags or "native" in self.flags:
            return False
        return self.instruction_count > 0

    @property
    def signature(self) -> str:
        return f"{self.name}{self.descriptor}"

    def body_entry_index(self) -> int:
        """Index of the first instruction or label line (insertion point)."""
        for i, ln in enumerate(self.lines[1:-1], start=1):
            if ln.kind in (LineKind.INSTRUCTION, LineKind.LABEL):
                return i
        return max(len(self.lines) - 1, 1)


@dataclass(frozen=True, slots=True)
class SmaliClass:
    """Parsed class file: preamble directives followed by methods."""

    class_name: str
    super_name: str
    methods: tuple[SmaliMethod, ...]
    preamble: tuple[SmaliLine, ...] = ()
    source_name: str | None = field(default=None, compare=False)
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def method(self, name: str, descriptor: str | None = None) -> SmaliMethod:
        for m in self.methods:
            if m.name == name and (descriptor is None or m.descriptor == descriptor):
                return m
        raise KeyError(f"no method {name!r} in {self.class_name or '<anonymous>'}")


@dataclass(frozen=True, slots=True)
class SmaliApp:
    """One application: a set of class files under a common id."""

    app_id: str
    classes: tuple[SmaliClass, ...]

    def sorted_classes(self) -> tuple[SmaliClass, ...]:
        return tuple(sorted(self.classes, key=lambda c: (c.class_name, c.source_name or "")))


@dataclass(frozen=True, slots=True)
class OpcodeSequence:
    """Opcode-id sequence for one app, truncated at ``max_len``."""

    app_id: str
    ids: tuple[int, ...]
    max_len: int = 8192

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if len(self.ids) > self.max_len:
            raise ValueError(f"sequence length {len(self.ids)} exceeds max_len {self.max_len}")
        if any(i < 0 for i in self.ids):
            raise ValueError("opcode ids must be non-negative")

    def __len__(self) -> int:
        return len(self.ids)


_MNEMONIC_RE = re.compile(r"^[A-Za-z][A-Za-z0-9/._-]*$")
_REGISTER_RE = re.compile(r"^[vp]\d+$")


def _strip_inline_comment(text: str) -> str:
    """Cut an unquoted trailing ``#`` comment off an instruction line."""
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if escaped:
            escaped = False
            continue
        if ch == "\\":
            escaped = True
        elif ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            return text[:i]
    return text


def _split_operands(text: str) -> list[str]:
    """Split an operand string on top-level commas, honoring braces/quotes."""
    parts: list[str] = []
    depth = 0
    in_string = False
    escaped = False
    current: list[str] = []
    for ch in text:
        if escaped:
            current.append(ch)
            escaped = False
            continue
        if ch == "\\":
            current.append(ch)
            escaped = True
            continue
        if ch == '"':
            in_string = not in_string
        elif not in_string:
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append("".join(current).strip())
                current = []
                continue
        current.append(ch)
    tail = "".join(current).strip()
    if tail:
        parts.append(tail)
    return parts


def _operand_registers(token: str) -> list[str]:
    """Register names referenced by one operand token."""
    if token.startswith("{") and token.endswith("}"):
        inner = token[1:-1]
        if ".." in inner:
            lo, hi = (t.strip() for t in inner.split("..", 1))
            if _REGISTER_RE.match(lo) and _REGISTER_RE.match(hi) and lo[0] == hi[0]:
                prefix = lo[0]
                return [f"{prefix}{i}" for i in range(int(lo[1:]), int(hi[1:]) + 1)]
            return []
        return [t.strip() for t in inner.split(",") if _REGISTER_RE.match(t.strip())]
    if token.startswith('"'):
        return []
    if _REGISTER_RE.match(token):
        return [token]
    return []


def parse_line(raw: str) -> SmaliLine:
    """Classify a single line and extract instruction structure."""
    raw = raw.rstrip()
    stripped = raw.strip()
    if not stripped:
        return SmaliLine(raw=raw, kind=LineKind.BLANK)
    first = stripped[0]
    if first == "#":
        return SmaliLine(raw=raw, kind=LineKind.COMMENT)
    if first == ".":
        return SmaliLine(raw=raw, kind=LineKind.DIRECTIVE)
    if first == ":":
        return SmaliLine(raw=raw, kind=LineKind.LABEL, label=stripped.split()[0])

    code = _strip_inline_comment(stripped).strip()
    if not code:
        return SmaliLine(raw=raw, kind=LineKind.COMMENT)
    head, _, rest = code.partition(" ")
    mnemonic = head.strip()
    if not _MNEMONIC_RE.match(mnemonic):
        # Not something we recognize as an opcode shape; keep it opaque.
        return SmaliLine(raw=raw, kind=LineKind.INSTRUCTION, opcode=mnemonic, operands=())
    operands = tuple(_split_operands(rest.strip())) if rest.strip() else ()
    per_operand = [_operand_registers(tok) for tok in operands]
    reads, writes = register_effects(mnemonic, per_operand)
    target = next((tok for tok in operands if tok.startswith(":")), None)
    return SmaliLine(
        raw=raw,
        kind=LineKind.INSTRUCTION,
        opcode=mnemonic,
        operands=operands,
        registers_read=reads,
        registers_written=writes,
        branch_target=target,
    )


_METHOD_DIRECTIVE_RE = re.compile(r"^\.method\b(.*)$")
_END_METHOD_RE = re.compile(r"^\.end\s+method\b")
_REGISTERS_RE = re.compile(r"^\.registers\s+(\d+)")
_LOCALS_RE = re.compile(r"^\.locals\s+(\d+)")
_CLASS_RE = re.compile(r"^\.class\b(?:\s+[\w$-]+)*\s+(\S+)\s*$")
_SUPER_RE = re.compile(r"^\.super\s+(\S+)\s*$")

_PARAM_TYPE_RE = re.compile(r"\[*(?:[ZBSCIJFD]|L[^;]*;)")

_WIDE_TYPES = frozenset({"J", "D"})


def descriptor_param_types(descriptor: str) -> list[str]:
    """Parameter type list from a ``(params)ret`` descriptor."""
    open_idx = descriptor.find("(")
    close_idx = descriptor.find(")")
    if open_idx < 0 or close_idx < 0 or close_idx < open_idx:
        return []
    return _PARAM_TYPE_RE.findall(descriptor[open_idx + 1 : close_idx])


def descriptor_return_type(descriptor: str) -> str:
    close_idx = descriptor.find(")")
    if close_idx < 0:
        return ""
    ret = descriptor[close_idx + 1 :]
    if len(ret) == 2 and ret[1] == ";" and ret[0] in "IVZBSCJFD":
        ret = ret[0]
    return ret


def param_word_count(descriptor: str, is_static: bool) -> int:
    """Register slots consumed by the parameters (wide types take two)."""
    words = sum(2 if t.lstrip("[") in _WIDE_TYPES and not t.startswith("[") else 1
                for t in descriptor_param_types(descriptor))
    return words + (0 if is_static else 1)


def _parse_method_header(code: str) -> tuple[tuple[str, ...], str, str]:
    tokens = code.split()
    if len(tokens) < 2 or "(" not in tokens[-1]:
        raise SmaliParseError(f"malformed .method directive: {code!r}")
    sig = tokens[-1]
    flags = tuple(tokens[1:-1])
    name, _, proto = sig.partition("(")
    return flags, name, "(" + proto


def _method_param_registers(
    descriptor: str, flags: tuple[str, ...], registers_declared: int, body: list[SmaliLine]
) -> tuple[str, ...]:
    words = param_word_count(descriptor, "static" in flags)
    if words == 0:
        return ()
    uses_p_names = any(
        r.startswith("p") for ln in body if ln.is_instruction() for r in ln.registers
    )
    if uses_p_names:
        return tuple(f"p{i}" for i in range(words))
    start = max(registers_declared - words, 0)
    return tuple(f"v{i}" for i in range(start, start + words))


def parse_class(text: str, source_name: str | None = None) -> SmaliClass:
    """Parse one Smali class file into its structural representation.

    Every input line is retained exactly once. Missing ``.class``
    directives are recorded as diagnostics rather than rejected so that
    method-only snippets parse.
    """
    lines = [parse_line(raw) for raw in text.splitlines()]

    class_name = ""
    super_name = ""
    diagnostics: list[str] = []
    preamble: list[SmaliLine] = []
    methods: list[SmaliMethod] = []

    i = 0
    n = len(lines)
    in_preamble = True
    pending_trailing: list[SmaliLine] = []

    def flush_trailing():
        nonlocal pending_trailing
        if pending_trailing and methods:
            last = methods[-1]
            methods[-1] = SmaliMethod(
                name=last.name,
                descriptor=last.descriptor,
                flags=last.flags,
                registers_declared=last.registers_declared,
                lines=last.lines,
                trailing=last.trailing + tuple(pending_trailing),
                param_registers=last.param_registers,
            )
        pending_trailing = []

    while i < n:
        ln = lines[i]
        stripped = ln.raw.strip()
        if ln.kind is LineKind.DIRECTIVE and _METHOD_DIRECTIVE_RE.match(stripped):
            flush_trailing()
            in_preamble = False
            start = i
            start_line_no = i + 1
            flags, name, descriptor = _parse_method_header(stripped)
            j = i + 1
            registers_declared = 0
            saw_registers = False
            while j < n:
                inner = lines[j].raw.strip()
                if lines[j].kind is LineKind.DIRECTIVE:
                    if _END_METHOD_RE.match(inner):
                        break
                    m = _REGISTERS_RE.match(inner)
                    if m:
                        registers_declared = int(m.group(1))
                        saw_registers = True
                    m = _LOCALS_RE.match(inner)
                    if m and not saw_registers:
                        registers_declared = int(m.group(1)) + param_word_count(
                            descriptor, "static" in flags
                        )
                j += 1
            if j >= n:
                raise SmaliParseError(
                    f"unterminated method {name!r} (.method without .end method)",
                    line_number=start_line_no,
                )
            body = lines[start : j + 1]
            params = _method_param_registers(descriptor, flags, registers_declared, body)
            methods.append(
                SmaliMethod(
                    name=name,
                    descriptor=descriptor,
                    flags=flags,
                    registers_declared=registers_declared,
                    lines=tuple(body),
                    param_registers=params,
                )
            )
            i = j + 1
            continue

        if ln.kind is LineKind.DIRECTIVE:
            m = _CLASS_RE.match(stripped)
            if m:
                class_name = m.group(1)
            m = _SUPER_RE.match(stripped)
            if m:
                super_name = m.group(1)
        if in_preamble:
            preamble.append(ln)
        else:
            pending_trailing.append(ln)
        i += 1

    flush_trailing()
    if pending_trailing:
        preamble.extend(pending_trailing)

    if not class_name:
        diagnostics.append("missing .class directive")

    return SmaliClass(
        class_name=class_name,
        super_name=super_name,
        methods=tuple(methods),
        preamble=tuple(preamble),
        source_name=source_name,
        diagnostics=tuple(diagnostics),
    )


def serialize_class(cls: SmaliClass) -> str:
    """Emit a class back to Smali text; inverse of ``parse_class``."""
    out: list[str] = [ln.raw for ln in cls.preamble]
    for m in cls.methods:
        out.extend(ln.raw for ln in m.lines)
        out.extend(ln.raw for ln in m.trailing)
    return "\n".join(out) + ("\n" if out else "")


def method_opcode_ids(method: SmaliMethod, table: OpcodeTable) -> list[int]:
    return [table.id_of(ln.opcode or "") for ln in method.lines if ln.is_instruction()]


def iter_methods(app: SmaliApp | list[SmaliClass] | tuple[SmaliClass, ...]):
    """Methods of an app in canonical order: class name, then file order."""
    classes = app.classes if isinstance(app, SmaliApp) else tuple(app)
    for cls in sorted(classes, key=lambda c: (c.class_name, c.source_name or "")):
        for method in cls.methods:
            yield cls, method


def extract_opcode_sequence(
    app: SmaliApp | list[SmaliClass] | tuple[SmaliClass, ...],
    table: OpcodeTable | None = None,
    max_len: int = 8192,
    app_id: str | None = None,
) -> OpcodeSequence:
    """Concatenate per-method opcode ids with padding id 1 between methods.

    Methods are visited in canonical order and the sequence is truncated
    at ``max_len``. A pure function of (app, table, max_len).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    table = table or default_table()
    ids: list[int] = []
    first = True
    for _, method in iter_methods(app):
        if not first:
            ids.append(table.padding_id)
        first = False
        ids.extend(method_opcode_ids(method, table))
        if len(ids) >= max_len:
            ids = ids[:max_len]
            break
    if app_id is None:
        app_id = app.app_id if isinstance(app, SmaliApp) else ""
    return OpcodeSequence(app_id=app_id, ids=tuple(ids[:max_len]), max_len=max_len)


def class_file_path(class_name: str, fallback: str = "Class.smali") -> str:
    """Relative file path for a class name like ``Lcom/apk/Demo;``."""
    if class_name.startswith("L") and class_name.endswith(";"):
        return class_name[1:-1] + ".smali"
    return fallback


def load_app(directory: str | Path, app_id: str | None = None) -> SmaliApp:
    """Parse every ``.smali`` file under a directory as one app."""
    directory = Path(directory)
    classes = []
    for path in sorted(directory.rglob("*.smali")):
        rel = path.relative_to(directory).as_posix()
        classes.append(parse_class(path.read_text(encoding="utf-8"), source_name=rel))
    return SmaliApp(app_id=app_id or directory.name, classes=tuple(classes))


def save_app(app: SmaliApp, directory: str | Path) -> list[Path]:
    """Serialize an app into a directory tree, one file per class."""
    directory = Path(directory)
    written = []
    for idx, cls in enumerate(app.classes):
        rel = cls.source_name or class_file_path(cls.class_name, fallback=f"Class{idx}.smali")
        path = directory / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(serialize_class(cls), encoding="utf-8")
        written.append(path)
    return written
