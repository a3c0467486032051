"""Dalvik opcode vocabulary and per-instruction register effects.

The opcode table maps every standard Dalvik mnemonic to a stable integer
id. Ids 0 and 1 are reserved: 0 marks unknown mnemonics, 1 is the padding
symbol emitted between concatenated methods. Real mnemonics are numbered
from 2 in bytecode order, so the table is deterministic across runs and
machines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

UNKNOWN_ID = 0
PADDING_ID = 1

# Standard Dalvik instruction set in bytecode order (unused slots skipped),
# plus the method-handle/invoke-custom additions of later dex versions.
DALVIK_MNEMONICS: tuple[str, ...] = (
    "nop",
    "move",
    "move/from16",
    "move/16",
    "move-wide",
    "move-wide/from16",
    "move-wide/16",
    "move-object",
    "move-object/from16",
    "move-object/16",
    "move-result",
    "move-result-wide",
    "move-result-object",
    "move-exception",
    "return-void",
    "return",
    "return-wide",
    "return-object",
    "const/4",
    "const/16",
    "const",
    "const/high16",
    "const-wide/16",
    "const-wide/32",
    "const-wide",
    "const-wide/high16",
    "const-string",
    "const-string/jumbo",
    "const-class",
    "monitor-enter",
    "monitor-exit",
    "check-cast",
    "instance-of",
    "array-length",
    "new-instance",
    "new-array",
    "filled-new-array",
    "filled-new-array/range",
    "fill-array-data",
    "throw",
    "goto",
    "goto/16",
    "goto/32",
    "packed-switch",
    "sparse-switch",
    "cmpl-float",
    "cmpg-float",
    "cmpl-double",
    "cmpg-double",
    "cmp-long",
    "if-eq",
    "if-ne",
    "if-lt",
    "if-ge",
    "if-gt",
    "if-le",
    "if-eqz",
    "if-nez",
    "if-ltz",
    "if-gez",
    "if-gtz",
    "if-lez",
    "aget",
    "aget-wide",
    "aget-object",
    "aget-boolean",
    "aget-byte",
    "aget-char",
    "aget-short",
    "aput",
    "aput-wide",
    "aput-object",
    "aput-boolean",
    "aput-byte",
    "aput-char",
    "aput-short",
    "iget",
    "iget-wide",
    "iget-object",
    "iget-boolean",
    "iget-byte",
    "iget-char",
    "iget-short",
    "iput",
    "iput-wide",
    "iput-object",
    "iput-boolean",
    "iput-byte",
    "iput-char",
    "iput-short",
    "sget",
    "sget-wide",
    "sget-object",
    "sget-boolean",
    "sget-byte",
    "sget-char",
    "sget-short",
    "sput",
    "sput-wide",
    "sput-object",
    "sput-boolean",
    "sput-byte",
    "sput-char",
    "sput-short",
    "invoke-virtual",
    "invoke-super",
    "invoke-direct",
    "invoke-static",
    "invoke-interface",
    "invoke-virtual/range",
    "invoke-super/range",
    "invoke-direct/range",
    "invoke-static/range",
    "invoke-interface/range",
    "neg-int",
    "not-int",
    "neg-long",
    "not-long",
    "neg-float",
    "neg-double",
    "int-to-long",
    "int-to-float",
    "int-to-double",
    "long-to-int",
    "long-to-float",
    "long-to-double",
    "float-to-int",
    "float-to-long",
    "float-to-double",
    "double-to-int",
    "double-to-long",
    "double-to-float",
    "int-to-byte",
    "int-to-char",
    "int-to-short",
    "add-int",
    "sub-int",
    "mul-int",
    "div-int",
    "rem-int",
    "and-int",
    "or-int",
    "xor-int",
    "shl-int",
    "shr-int",
    "ushr-int",
    "add-long",
    "sub-long",
    "mul-long",
    "div-long",
    "rem-long",
    "and-long",
    "or-long",
    "xor-long",
    "shl-long",
    "shr-long",
    "ushr-long",
    "add-float",
    "sub-float",
    "mul-float",
    "div-float",
    "rem-float",
    "add-double",
    "sub-double",
    "mul-double",
    "div-double",
    "rem-double",
    "add-int/2addr",
    "sub-int/2addr",
    "mul-int/2addr",
    "div-int/2addr",
    "rem-int/2addr",
    "and-int/2addr",
    "or-int/2addr",
    "xor-int/2addr",
    "shl-int/2addr",
    "shr-int/2addr",
    "ushr-int/2addr",
    "add-long/2addr",
    "sub-long/2addr",
    "mul-long/2addr",
    "div-long/2addr",
    "rem-long/2addr",
    "and-long/2addr",
    "or-long/2addr",
    "xor-long/2addr",
    "shl-long/2addr",
    "shr-long/2addr",
    "ushr-long/2addr",
    "add-float/2addr",
    "sub-float/2addr",
    "mul-float/2addr",
    "div-float/2addr",
    "rem-float/2addr",
    "add-double/2addr",
    "sub-double/2addr",
    "mul-double/2addr",
    "div-double/2addr",
    "rem-double/2addr",
    "add-int/lit16",
    "rsub-int",
    "mul-int/lit16",
    "div-int/lit16",
    "rem-int/lit16",
    "and-int/lit16",
    "or-int/lit16",
    "xor-int/lit16",
    "add-int/lit8",
    "rsub-int/lit8",
    "mul-int/lit8",
    "div-int/lit8",
    "rem-int/lit8",
    "and-int/lit8",
    "or-int/lit8",
    "xor-int/lit8",
    "shl-int/lit8",
    "shr-int/lit8",
    "ushr-int/lit8",
    "invoke-polymorphic",
    "invoke-polymorphic/range",
    "invoke-custom",
    "invoke-custom/range",
    "const-method-handle",
    "const-method-type",
)


@dataclass(frozen=True, slots=True)
class OpcodeTable:
    """Injective mnemonic -> id mapping with reserved ids 0 and 1.

    ``unknown_id`` is returned for mnemonics outside the vocabulary so the
    parser never rejects exotic dialects; ``padding_id`` separates methods
    in extracted sequences.
    """

    mnemonic_to_id: dict[str, int] = field(repr=False)
    id_to_mnemonic: dict[int, str] = field(repr=False)
    unknown_id: int = UNKNOWN_ID
    padding_id: int = PADDING_ID

    @classmethod
    def default(cls) -> "OpcodeTable":
        fwd = {m: i + 2 for i, m in enumerate(DALVIK_MNEMONICS)}
        rev = {v: k for k, v in fwd.items()}
        return cls(mnemonic_to_id=fwd, id_to_mnemonic=rev)

    @property
    def vocabulary_size(self) -> int:
        return len(self.mnemonic_to_id) + 2

    def id_of(self, mnemonic: str) -> int:
        return self.mnemonic_to_id.get(mnemonic, self.unknown_id)

    def mnemonic_of(self, opcode_id: int) -> str | None:
        return self.id_to_mnemonic.get(opcode_id)

    def __contains__(self, mnemonic: str) -> bool:
        return mnemonic in self.mnemonic_to_id


_DEFAULT_TABLE: OpcodeTable | None = None


def default_table() -> OpcodeTable:
    """Shared default opcode table (built once, immutable)."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = OpcodeTable.default()
    return _DEFAULT_TABLE


_BINOP_BASES = frozenset(
    f"{op}-{ty}"
    for op in ("add", "sub", "mul", "div", "rem", "and", "or", "xor", "shl", "shr", "ushr", "rsub")
    for ty in ("int", "long", "float", "double")
) | {"rsub-int"}

_WRITE_FIRST_PREFIXES = (
    "const",
    "move",
    "new-instance",
    "new-array",
    "array-length",
    "instance-of",
    "cmpl-",
    "cmpg-",
    "cmp-long",
    "neg-",
    "not-",
    "aget",
    "iget",
    "sget",
)

_CONVERSIONS = frozenset(
    f"{a}-to-{b}"
    for a in ("int", "long", "float", "double")
    for b in ("int", "long", "float", "double", "byte", "char", "short")
)

_READ_ALL_PREFIXES = (
    "if-",
    "return",
    "throw",
    "monitor-",
    "aput",
    "iput",
    "sput",
    "invoke-",
    "packed-switch",
    "sparse-switch",
    "fill-array-data",
    "filled-new-array",
)

_NO_EFFECT = frozenset({"nop", "goto", "goto/16", "goto/32", "return-void"})


def register_effects(
    mnemonic: str, operand_registers: list[list[str]]
) -> tuple[frozenset[str], frozenset[str]]:
    """Classify an instruction's register operands into (reads, writes).

    ``operand_registers`` holds the register names found in each operand
    position (brace groups may contribute several). Unknown mnemonics are
    treated conservatively: every referenced register counts as read.
    """
    flat = [r for group in operand_registers for r in group]
    if not flat or mnemonic in _NO_EFFECT:
        return frozenset(), frozenset()

    base = mnemonic.split("/", 1)[0]
    is_2addr = mnemonic.endswith("/2addr")

    if base in _BINOP_BASES:
        if is_2addr:
            return frozenset(flat), frozenset(flat[:1])
        return frozenset(flat[1:]), frozenset(flat[:1])

    if base in _CONVERSIONS or mnemonic.startswith(_WRITE_FIRST_PREFIXES):
        return frozenset(flat[1:]), frozenset(flat[:1])

    if mnemonic == "check-cast":
        return frozenset(flat), frozenset(flat[:1])

    if mnemonic.startswith(_READ_ALL_PREFIXES):
        return frozenset(flat), frozenset()

    # Unknown mnemonic: conservative, everything is a read.
    return frozenset(flat), frozenset()
