"""Clarity/Complexity/Connection (CCC) visibility scoring for injected code.

A CCC score near 1 means a human analyst will spot the injected snippet
easily; near 0 means it blends in. The score combines three components
computed over an :class:`InjectionManifest`:

* clarity (c1): 1.0 whenever any site contains a literal ``nop``;
  otherwise the mean over sites of ``e^l / (e^l + s)`` where ``l`` is the
  injected instruction count and ``s`` the host's pre-injection count.
* complexity (c2): mean of per-site control-flow classes.
* connection (c3): mean of per-site original-variable-use classes.

Counting convention (load-bearing, do not change casually): ``l`` and
``s`` count instruction lines only. Labels, directives, comments, and
blank lines are excluded everywhere, so a loop's jump tags do not inflate
the size of an injected block.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

from .smali import LineKind, SmaliLine, SmaliMethod


class UndefinedMetricError(ValueError):
    """Raised when a metric is requested for an empty manifest."""


class ComplexityClass(enum.Enum):
    """Analysis effort needed to understand an injected snippet."""

    STRAIGHT_LINE = 0.0
    FUNCTION_OR_CONDITIONAL = 0.33
    LOOP_OR_NESTED_CONDITION = 0.66
    RECURSION_OR_COMPLEX = 1.0


class ConnectionClass(enum.Enum):
    """How entangled a snippet is with the host's original variables."""

    NO_ATTACHMENT = 0.0
    ONE_ORIGINAL_VARIABLE = 0.5
    MULTIPLE_ORIGINAL_VARIABLES = 1.0


@dataclass(frozen=True, slots=True)
class InjectionSite:
    """Record of one injected snippet inside one host method."""

    method_ref: tuple[str, str]
    injected_instruction_count: int
    original_instruction_count: int
    contains_explicit_nop: bool
    complexity: ComplexityClass
    connection: ConnectionClass
    injected_line_spans: tuple[tuple[int, int], ...] = ()
    registers_added: int = 0
    rewritten_lines: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        if self.injected_instruction_count < 1:
            raise ValueError("injected_instruction_count must be >= 1")
        if self.original_instruction_count < 0:
            raise ValueError("original_instruction_count must be >= 0")


@dataclass(frozen=True, slots=True)
class InjectionManifest:
    """Every injection applied to one app; the sole input to the metric."""

    app_id: str
    sites: tuple[InjectionSite, ...]

    def to_json(self) -> str:
        payload = {
            "app_id": self.app_id,
            "sites": [
                {
                    "method": f"{s.method_ref[0]}->{s.method_ref[1]}",
                    "l_count": s.injected_instruction_count,
                    "s_count": s.original_instruction_count,
                    "explicit_nop": s.contains_explicit_nop,
                    "complexity_class": s.complexity.name.lower(),
                    "connection_class": s.connection.name.lower(),
                }
                for s in self.sites
            ],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "InjectionManifest":
        payload = json.loads(text)
        sites = []
        for entry in payload.get("sites", []):
            method = entry["method"]
            cls_name, _, sig = method.partition("->")
            sites.append(
                InjectionSite(
                    method_ref=(cls_name, sig),
                    injected_instruction_count=int(entry["l_count"]),
                    original_instruction_count=int(entry["s_count"]),
                    contains_explicit_nop=bool(entry["explicit_nop"]),
                    complexity=_parse_class_field(ComplexityClass, entry["complexity_class"]),
                    connection=_parse_class_field(ConnectionClass, entry["connection_class"]),
                )
            )
        return cls(app_id=str(payload.get("app_id", "")), sites=tuple(sites))


def _parse_class_field(enum_cls, value):
    if isinstance(value, str):
        return enum_cls[value.upper()]
    return enum_cls(float(value))


@dataclass(frozen=True, slots=True)
class CccWeights:
    """Component weights; must be in [0, 1] and sum to 1."""

    w1: float = 0.4
    w2: float = 0.2
    w3: float = 0.4

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        total = self.w1 + self.w2 + self.w3
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {total})")


DEFAULT_WEIGHTS = CccWeights()


@dataclass(frozen=True, slots=True)
class CccReport:
    """Component values and the final weighted score for one app."""

    c1: float
    c2: float
    c3: float
    weights: CccWeights
    ccc: float

    def __post_init__(self):
        expected = (
            self.weights.w1 * self.c1
            + self.weights.w2 * (1.0 - self.c2)
            + self.weights.w3 * (1.0 - self.c3)
        )
        if abs(expected - self.ccc) > 1e-9:
            raise ValueError("ccc inconsistent with components and weights")

    def to_json(self) -> str:
        return json.dumps(
            {
                "c1": self.c1,
                "c2": self.c2,
                "c3": self.c3,
                "weights": {"w1": self.weights.w1, "w2": self.weights.w2, "w3": self.weights.w3},
                "ccc": self.ccc,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CccReport":
        d = json.loads(text)
        w = d.get("weights", {})
        return cls(
            c1=float(d["c1"]),
            c2=float(d["c2"]),
            c3=float(d["c3"]),
            weights=CccWeights(float(w["w1"]), float(w["w2"]), float(w["w3"])),
            ccc=float(d["ccc"]),
        )


def _require_sites(manifest: InjectionManifest) -> tuple[InjectionSite, ...]:
    if not manifest.sites:
        raise UndefinedMetricError(f"empty manifest for app {manifest.app_id!r}")
    return manifest.sites


def _clarity_ratio(l_count: int, s_count: int) -> float:
    # e^l / (e^l + s), computed as 1 / (1 + s * e^-l) so huge l cannot overflow.
    return 1.0 / (1.0 + s_count * math.exp(-float(l_count)))


def clarity(manifest: InjectionManifest) -> float:
    """c1: 1.0 with any explicit NOP, else the mean size-ratio transform.

    The explicit-NOP rule is unconditional: a single literal ``nop``
    anywhere marks the whole app as clearly manipulated.
    """
    sites = _require_sites(manifest)
    if any(s.contains_explicit_nop for s in sites):
        return 1.0
    return sum(
        _clarity_ratio(s.injected_instruction_count, s.original_instruction_count) for s in sites
    ) / len(sites)


def complexity(manifest: InjectionManifest) -> float:
    """c2: arithmetic mean of per-site complexity class values."""
    sites = _require_sites(manifest)
    return sum(s.complexity.value for s in sites) / len(sites)


def connection(manifest: InjectionManifest) -> float:
    """c3: arithmetic mean of per-site connection class values."""
    sites = _require_sites(manifest)
    return sum(s.connection.value for s in sites) / len(sites)


def ccc(manifest: InjectionManifest, weights: CccWeights = DEFAULT_WEIGHTS) -> CccReport:
    """Weighted visibility score: w1*c1 + w2*(1-c2) + w3*(1-c3)."""
    c1 = clarity(manifest)
    c2 = complexity(manifest)
    c3 = connection(manifest)
    score = weights.w1 * c1 + weights.w2 * (1.0 - c2) + weights.w3 * (1.0 - c3)
    return CccReport(c1=c1, c2=c2, c3=c3, weights=weights, ccc=score)


def mean_report(reports: list[CccReport], weights: CccWeights = DEFAULT_WEIGHTS) -> CccReport:
    """Component-wise mean across per-app reports."""
    if not reports:
        raise UndefinedMetricError("no reports to aggregate")
    c1 = sum(r.c1 for r in reports) / len(reports)
    c2 = sum(r.c2 for r in reports) / len(reports)
    c3 = sum(r.c3 for r in reports) / len(reports)
    score = weights.w1 * c1 + weights.w2 * (1.0 - c2) + weights.w3 * (1.0 - c3)
    return CccReport(c1=c1, c2=c2, c3=c3, weights=weights, ccc=score)


_CONDITIONAL_PREFIX = "if-"
_GOTO_PREFIXES = ("goto",)


def _snippet_labels(snippet: list[SmaliLine] | tuple[SmaliLine, ...]) -> dict[str, int]:
    return {
        ln.label: i
        for i, ln in enumerate(snippet)
        if ln.kind is LineKind.LABEL and ln.label is not None
    }


def classify_complexity(
    snippet: list[SmaliLine] | tuple[SmaliLine, ...],
    host_method_name: str | None = None,
) -> ComplexityClass:
    """Heuristic control-flow classification of an injected snippet.

    Straight line when no branches; one forward conditional without a
    back-edge is a conditional; any back-edge or nested conditionals mean
    loop-level effort; two or more back-edges, or a call back into the
    host method, count as recursion-grade complexity. Manifests store the
    final class, so callers can always override the heuristic.
    """
    if not snippet:
        raise ValueError("empty snippet")
    labels = _snippet_labels(snippet)

    conditionals: list[tuple[int, str | None]] = []
    back_edges = 0
    gotos = 0
    calls_host = False
    for i, ln in enumerate(snippet):
        if not ln.is_instruction() or ln.opcode is None:
            continue
        op = ln.opcode
        if host_method_name and op.startswith("invoke-") and f"->{host_method_name}(" in ln.raw:
            calls_host = True
        is_cond = op.startswith(_CONDITIONAL_PREFIX)
        is_goto = op.startswith(_GOTO_PREFIXES)
        if not (is_cond or is_goto):
            continue
        target = ln.branch_target
        target_idx = labels.get(target.split()[0]) if target else None
        if target_idx is not None and target_idx < i:
            back_edges += 1
        elif is_cond:
            conditionals.append((i, target))
        else:
            gotos += 1

    if calls_host or back_edges >= 2:
        return ComplexityClass.RECURSION_OR_COMPLEX
    if back_edges == 1 or _has_nested_conditionals(conditionals, labels, len(snippet)):
        return ComplexityClass.LOOP_OR_NESTED_CONDITION
    if len(conditionals) == 1 or (gotos and not conditionals):
        return ComplexityClass.FUNCTION_OR_CONDITIONAL
    if conditionals:
        return ComplexityClass.LOOP_OR_NESTED_CONDITION
    return ComplexityClass.STRAIGHT_LINE


def _has_nested_conditionals(
    conditionals: list[tuple[int, str | None]], labels: dict[str, int], length: int
) -> bool:
    # A conditional nested inside another's forward span.
    spans = []
    for idx, target in conditionals:
        end = labels.get(target.split()[0], length) if target else length
        spans.append((idx, max(end, idx)))
    for a, (start, end) in enumerate(spans):
        for b, (other_start, _) in enumerate(spans):
            if a != b and start < other_start < end:
                return True
    return False


def classify_connection(
    snippet: list[SmaliLine] | tuple[SmaliLine, ...],
    host: SmaliMethod,
    frame_registers: int | None = None,
) -> ConnectionClass:
    """Count distinct original variables the snippet touches (reads or writes).

    Original variables are the registers named by the host's pre-injection
    instructions plus its parameter slots. Parameter slots are resolved
    against ``frame_registers`` (the enclosing method's register count
    after injection, defaulting to the host's): when an attack grows the
    frame, the standard trailing-slot convention moves the parameters onto
    the newly added registers, so scratch registers landing there count as
    parameter use.
    """
    used: set[str] = set()
    for ln in snippet:
        if ln.is_instruction():
            used |= ln.registers
    originals: set[str] = set(host.param_registers)
    for ln in host.lines:
        if ln.is_instruction():
            originals |= ln.registers

    frame = frame_registers if frame_registers is not None else host.registers_declared
    words = len(host.param_registers)
    if words and not any(r.startswith("p") for r in host.param_registers):
        start = max(frame - words, 0)
        originals |= {f"v{i}" for i in range(start, start + words)}

    count = len(used & originals)
    if count == 0:
        return ConnectionClass.NO_ATTACHMENT
    if count == 1:
        return ConnectionClass.ONE_ORIGINAL_VARIABLE
    return ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES
