"""Tiny Smali interpreter used as a semantics-preservation oracle.

Supports integer registers only: const loads, moves, the int arithmetic
and logic families, conditional and unconditional branches, labels, and
returns. Anything else makes the oracle abstain, never guess. Arithmetic
wraps to 32-bit two's complement, matching the runtime the code targets.

Register semantics: all registers start at zero, which keeps evaluation a
total deterministic function. Argument binding follows demo-style Smali
where register names are absolute: ``pN`` names when the body uses them,
otherwise the free registers (read before any write, in first-use order).
That convention survives injected code growing the declared register
count, which would displace a naive trailing-slot binding. Callers can
always pass explicit ``arg_registers``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .smali import (
    LineKind,
    SmaliLine,
    SmaliMethod,
    descriptor_param_types,
    descriptor_return_type,
)

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
_EDGE_VALUES = (0, 1, -1, INT32_MIN, INT32_MAX)

DEFAULT_STEP_BUDGET = 1_000_000


class UnsupportedMethodError(Exception):
    """Raised when a method uses anything outside the supported subset."""


class NonTerminationError(Exception):
    """Raised when execution exceeds the step budget."""


class EvalTrap(Exception):
    """Runtime trap (e.g. division by zero); deterministic, compared as outcome."""


def _wrap32(x: int) -> int:
    return ((x + 2**31) % 2**32) - 2**31


def _trunc_div(a: int, b: int) -> int:
    if b == 0:
        raise EvalTrap("division by zero")
    q = abs(a) // abs(b)
    return _wrap32(-q if (a < 0) != (b < 0) else q)


def _trunc_rem(a: int, b: int) -> int:
    if b == 0:
        raise EvalTrap("division by zero")
    return _wrap32(a - _trunc_div(a, b) * b)


_BINOPS = {
    "add": lambda a, b: _wrap32(a + b),
    "sub": lambda a, b: _wrap32(a - b),
    "mul": lambda a, b: _wrap32(a * b),
    "div": _trunc_div,
    "rem": _trunc_rem,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "shl": lambda a, b: _wrap32(a << (b & 0x1F)),
    "shr": lambda a, b: a >> (b & 0x1F),
    "ushr": lambda a, b: _wrap32((a & 0xFFFFFFFF) >> (b & 0x1F)),
}

_COMPARES = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b,
    "ge": lambda a, b: a >= b,
    "gt": lambda a, b: a > b,
    "le": lambda a, b: a <= b,
}

_CONST_OPS = frozenset({"const", "const/4", "const/16", "const/high16"})
_MOVE_OPS = frozenset({"move", "move/from16", "move/16"})
_GOTO_OPS = frozenset({"goto", "goto/16", "goto/32"})


@dataclass(slots=True)
class ExecState:
    """Mutable machine state threaded through one evaluation."""

    registers: dict[str, int] = field(default_factory=dict)
    pc: int = 0
    steps: int = 0
    step_budget: int = DEFAULT_STEP_BUDGET

    def read(self, reg: str) -> int:
        return self.registers.get(reg, 0)

    def write(self, reg: str, value: int) -> None:
        self.registers[reg] = _wrap32(value)


def _parse_literal(token: str) -> int:
    try:
        return _wrap32(int(token, 0))
    except ValueError as exc:
        raise UnsupportedMethodError(f"unparsable literal {token!r}") from exc


def _value(state: ExecState, token: str) -> int:
    if token and token[0] in "vp" and token[1:].isdigit():
        return state.read(token)
    return _parse_literal(token)


def _program(method: SmaliMethod) -> tuple[list[SmaliLine], dict[str, int]]:
    prog = [ln for ln in method.lines if ln.kind in (LineKind.INSTRUCTION, LineKind.LABEL)]
    labels: dict[str, int] = {}
    for i, ln in enumerate(prog):
        if ln.kind is LineKind.LABEL and ln.label:
            labels[ln.label] = i
    return prog, labels


def infer_arg_registers(method: SmaliMethod) -> tuple[str, ...]:
    """Registers that receive the arguments, in positional order.

    ``pN`` names win when present; otherwise the registers read before any
    write, scanning the body linearly, give the binding. Falls back to the
    declared trailing slots for parameters the body never reads.
    """
    arity = len(descriptor_param_types(method.descriptor))
    body = [ln for ln in method.lines if ln.is_instruction()]
    if any(r.startswith("p") for ln in body for r in ln.registers):
        return tuple(f"p{i}" for i in range(arity))

    written: set[str] = set()
    frees: list[str] = []
    for ln in body:
        for op_tok in ln.operands:
            for reg in _operand_order_registers(op_tok):
                if reg in ln.registers_read and reg not in written and reg not in frees:
                    frees.append(reg)
        written |= ln.registers_written
    for reg in method.param_registers:
        if len(frees) >= arity:
            break
        if reg not in frees:
            frees.append(reg)
    if len(frees) < arity:
        raise UnsupportedMethodError(
            f"cannot infer argument registers for {method.signature} (found {frees})"
        )
    return tuple(frees[:arity])


def _operand_order_registers(token: str) -> list[str]:
    if token.startswith("{") and token.endswith("}"):
        return [t.strip() for t in token[1:-1].split(",") if t.strip()]
    if token and token[0] in "vp" and token[1:].isdigit():
        return [token]
    return []


def eval_method(
    method: SmaliMethod,
    args: list[int] | tuple[int, ...],
    step_budget: int = DEFAULT_STEP_BUDGET,
    arg_registers: tuple[str, ...] | None = None,
) -> int | None:
    """Execute a method on integer arguments; returns the returned value.

    Raises :class:`UnsupportedMethodError` for anything outside the
    supported subset and :class:`NonTerminationError` past the step
    budget. ``return-void`` yields ``None``.
    """
    param_types = descriptor_param_types(method.descriptor)
    if any(t != "I" for t in param_types):
        raise UnsupportedMethodError(f"non-int parameters in {method.descriptor}")
    if descriptor_return_type(method.descriptor) not in ("I", "V"):
        raise UnsupportedMethodError(f"unsupported return type in {method.descriptor}")
    if len(args) != len(param_types):
        raise ValueError(f"arity mismatch: {len(args)} args for {method.descriptor}")
    if not method.has_body:
        raise UnsupportedMethodError(f"method {method.signature} has no body")

    binding = arg_registers or infer_arg_registers(method)
    if len(binding) != len(args):
        raise ValueError("arg_registers arity mismatch")

    prog, labels = _program(method)
    state = ExecState(step_budget=step_budget)
    for reg, val in zip(binding, args):
        state.write(reg, val)

    def jump(target: str | None) -> int:
        if target is None or target not in labels:
            raise UnsupportedMethodError(f"branch to unknown label {target!r}")
        return labels[target]

    while True:
        if state.pc >= len(prog):
            raise UnsupportedMethodError("fell off method end without return")
        state.steps += 1
        if state.steps > state.step_budget:
            raise NonTerminationError(f"step budget {state.step_budget} exceeded")
        ln = prog[state.pc]
        if ln.kind is LineKind.LABEL:
            state.pc += 1
            continue
        op = ln.opcode or ""
        ops = ln.operands

        if op == "nop":
            state.pc += 1
        elif op in _CONST_OPS:
            state.write(ops[0], _parse_literal(ops[1]))
            state.pc += 1
        elif op in _MOVE_OPS:
            state.write(ops[0], state.read(ops[1]))
            state.pc += 1
        elif op == "return-void":
            return None
        elif op == "return":
            return state.read(ops[0])
        elif op in _GOTO_OPS:
            state.pc = jump(ln.branch_target)
        elif op.startswith("if-"):
            cond = op[3:]
            if cond.endswith("z"):
                result = _COMPARES[cond[:-1]](state.read(ops[0]), 0)
            else:
                result = _COMPARES[cond](_value(state, ops[0]), _value(state, ops[1]))
            state.pc = jump(ln.branch_target) if result else state.pc + 1
        else:
            handled = _exec_binop(state, op, ops)
            if not handled:
                raise UnsupportedMethodError(f"unsupported opcode {op!r}")
            state.pc += 1


def _exec_binop(state: ExecState, op: str, ops: tuple[str, ...]) -> bool:
    base, _, variant = op.partition("/")
    if not base.endswith("-int"):
        return False
    name = base[: -len("-int")]
    if name == "rsub":
        # rsub computes lit - reg (base form is lit16, variant lit8).
        state.write(ops[0], _wrap32(_parse_literal(ops[2]) - state.read(ops[1])))
        return True
    fn = _BINOPS.get(name)
    if fn is None:
        return False
    if variant == "2addr":
        state.write(ops[0], fn(state.read(ops[0]), state.read(ops[1])))
    elif variant in ("lit8", "lit16"):
        state.write(ops[0], fn(state.read(ops[1]), _parse_literal(ops[2])))
    elif variant == "":
        state.write(ops[0], fn(state.read(ops[1]), state.read(ops[2])))
    else:
        return False
    return True


class Verdict(enum.Enum):
    EQUAL = "equal"
    NOT_EQUAL = "not_equal"
    ABSTAIN = "abstain"


@dataclass(frozen=True, slots=True)
class EquivalenceResult:
    verdict: Verdict
    witness: tuple[int, ...] | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.verdict is Verdict.EQUAL


def _edge_tuples(arity: int) -> list[tuple[int, ...]]:
    if arity == 0:
        return [()]
    if arity == 1:
        return [(v,) for v in _EDGE_VALUES]
    if arity == 2:
        return [(a, b) for a in _EDGE_VALUES for b in _EDGE_VALUES]
    return [tuple([v] * arity) for v in _EDGE_VALUES]


def check_equivalence(
    original: SmaliMethod,
    modified: SmaliMethod,
    trials: int = 1000,
    seed: int = 0,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> EquivalenceResult:
    """Compare two methods on random inputs plus integer edge cases.

    Argument binding is derived once from the original and applied to both
    sides, so register growth in the modified method cannot skew the
    comparison. Abstains (never guesses) when either side is unsupported
    or the step budget runs out.
    """
    import random

    try:
        binding = infer_arg_registers(original)
    except UnsupportedMethodError as exc:
        return EquivalenceResult(Verdict.ABSTAIN, detail=str(exc))
    arity = len(binding)

    rng = random.Random(seed)
    cases = _edge_tuples(arity)
    cases.extend(
        tuple(rng.randint(INT32_MIN, INT32_MAX) for _ in range(arity)) for _ in range(trials)
    )

    for case in cases:
        try:
            a = _outcome(original, case, step_budget, binding)
            b = _outcome(modified, case, step_budget, binding)
        except UnsupportedMethodError as exc:
            return EquivalenceResult(Verdict.ABSTAIN, detail=str(exc))
        except NonTerminationError as exc:
            return EquivalenceResult(Verdict.ABSTAIN, detail=str(exc))
        if a != b:
            return EquivalenceResult(
                Verdict.NOT_EQUAL, witness=case, detail=f"{a!r} != {b!r} on {case}"
            )
    return EquivalenceResult(Verdict.EQUAL)


def _outcome(method, case, step_budget, binding):
    try:
        return ("value", eval_method(method, case, step_budget, arg_registers=binding))
    except EvalTrap as trap:
        return ("trap", str(trap))
