"""Deciding which constants are references.

Candidates come from two places: constant operands of decoded
instructions, and a brute-force scan of data units in non-code regions
(plus undecoded code gaps for the tools that look there).  A candidate
passes the code test when it hits a decoded instruction start, else the
data test when it lands inside a data region, optionally widened by a
margin.  Everything else about this module is per-tool refinement:
alignment strides, magic-value floors, entry-only code targets, type
inference feeding string and float exclusions, and the grouping of
consecutive pointers into address tables.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import funcid
from .image import BinaryImage

# Values GHIDRA-style rules never accept as pointers (beyond the
# below-4096 floor, which is its own rejection).
MAGIC_VALUES = frozenset((
    0xFFFF, 0xFF00, 0xFFFFFF, 0xFF0000,
    0xFFFFFFFF, 0xFFFFFF00, 0xFFFF0000,
))

REJECT_TOO_SMALL = "too_small"
REJECT_MAGIC = "magic_value"
REJECT_NOT_ENTRY = "not_entry"
REJECT_OUT_OF_REGION = "out_of_region"
REJECT_FLOAT = "float_typed"
REJECT_STRING_OVERLAP = "string_overlap"


@dataclass(frozen=True, order=True)
class Xref:
    from_: int
    to: int
    kind: str  # c2c | c2d | d2c | d2d
    width: int
    origin: str  # operand | data_unit | address_table


@dataclass(frozen=True)
class Candidate:
    from_: int
    value: int
    width: int
    aligned: bool
    origin: str  # operand | data_unit


@dataclass(frozen=True)
class Rejection:
    from_: int
    value: int
    reason: str


@dataclass(frozen=True)
class AddressTable:
    start: int
    entries: tuple[int, ...]
    entry_width: int


@dataclass(frozen=True)
class InferredType:
    vaddr: int
    kind: str  # float | string | pointer | arithmetic_seq
    extent: int


@dataclass
class SymbolizeResult:
    xrefs: list[Xref]
    tables: list[AddressTable]
    types: list[InferredType]
    rejections: list[Rejection]


def _printable(b: int) -> bool:
    return 0x20 <= b <= 0x7E or b in (0x09, 0x0A, 0x0D)


def ascii_extent(buf: bytes, off: int) -> int:
    """Length of a terminated ASCII run at off, 0 when none qualifies."""
    n = 0
    while off + n < len(buf) and _printable(buf[off + n]):
        n += 1
    if n >= 2 and off + n < len(buf) and buf[off + n] == 0:
        return n + 1
    return 0


def utf16_extent(buf: bytes, off: int) -> int:
    """Length of a terminated UTF-16LE run at off, 0 when none qualifies."""
    n = 0
    while (off + 2 * n + 1 < len(buf) and _printable(buf[off + 2 * n])
           and buf[off + 2 * n + 1] == 0):
        n += 1
    end = off + 2 * n
    if n >= 2 and end + 1 < len(buf) and buf[end] == 0 and buf[end + 1] == 0:
        return 2 * n + 2
    return 0


def string_extent(buf: bytes, off: int) -> int:
    return ascii_extent(buf, off) or utf16_extent(buf, off)


def arithmetic_extent(buf: bytes, off: int, word: int) -> int:
    """Bytes covered by >=3 machine words with a constant stride."""
    values = []
    pos = off
    while pos + word <= len(buf) and len(values) < 3:
        values.append(int.from_bytes(buf[pos:pos + word], "little"))
        pos += word
    if len(values) < 3:
        return 0
    step = values[1] - values[0]
    if values[2] - values[1] != step:
        return 0
    count = 3
    while pos + word <= len(buf):
        nxt = int.from_bytes(buf[pos:pos + word], "little")
        if nxt - values[-1] != step:
            break
        values.append(nxt)
        count += 1
        pos += word
    return count * word


def _scan_regions(image: BinaryImage, result, config):
    """(start, end, section) ranges the data-unit scan covers."""
    regions = [(sec.vaddr, sec.end, sec) for sec in image.data_sections()]
    if getattr(config, "symbolize_scan_code_gaps", False):
        from .recursive import gap_regions
        for lo, hi in gap_regions(result, image):
            regions.append((lo, hi, image.section_at(lo)))
    return regions


def _referenced_addrs(result) -> set[int]:
    """Addresses any instruction operand points at."""
    out: set[int] = set()
    for insn in result.instructions.values():
        out.update(insn.const_values())
    return out


def extract_candidates(image: BinaryImage, result, config) -> list[Candidate]:
    """Raw candidates before any acceptance test.

    Operand candidates carry the instruction address; data-unit
    candidates come from striding the scan regions at the configured
    alignment (worst case every byte), reading machine-size values.
    """
    word = image.word_size
    out: list[Candidate] = []
    for vaddr in sorted(result.instructions):
        insn = result.instructions[vaddr]
        for value in insn.const_values():
            out.append(Candidate(vaddr, value, word, True, "operand"))
    alignment = config.symbolize_alignment
    referenced = _referenced_addrs(result) \
        if alignment == "xref_exception" else set()
    for lo, hi, sec in _scan_regions(image, result, config):
        if sec is None:
            continue
        for addr in _unit_offsets(lo, hi, word, alignment, referenced):
            if addr + word > sec.end:
                continue
            raw = sec.data[addr - sec.vaddr:addr - sec.vaddr + word]
            value = int.from_bytes(raw, "little")
            out.append(Candidate(addr, value, word, addr % word == 0,
                                 "data_unit"))
    return out


def _unit_offsets(lo: int, hi: int, word: int, alignment: str,
                  referenced: set[int]) -> list[int]:
    if alignment == "none":
        return list(range(lo, hi))
    stride = 4 if alignment == "xref_exception" else word
    first = lo + (-lo) % stride
    offsets = set(range(first, hi, stride))
    if alignment == "xref_exception":
        offsets.update(a for a in referenced if lo <= a < hi)
    return sorted(offsets)


def _known_entries(image: BinaryImage, result, config) -> set[int]:
    return {e.vaddr for e in funcid.collect_entries(image, result, None,
                                                    config)}


def _mid_function(value: int, entries: set[int]) -> bool:
    if value in entries:
        return False
    return any(e < value for e in entries)


def _overlaps_kind(types, lo: int, hi: int, kind: str) -> bool:
    return any(t.kind == kind and t.vaddr < hi and lo < t.vaddr + t.extent
               for t in types)


def classify_candidate(cand: Candidate, image: BinaryImage, result, config,
                       *, types=None, entries=None) -> Xref | Rejection:
    """Acceptance test for one candidate: code first, then data.

    types/entries can be passed in to avoid recomputation inside scans;
    both are derived from (image, result, config) when absent.
    """
    value = cand.value
    kind_from = "c" if image.in_code(cand.from_) else "d"
    if config.symbolize_magic_values:
        if value < 4096:
            return Rejection(cand.from_, value, REJECT_TOO_SMALL)
        if value in MAGIC_VALUES:
            return Rejection(cand.from_, value, REJECT_MAGIC)
    if cand.origin == "data_unit":
        if types is None:
            types = infer_types(image, result, config)
        lo, hi = cand.from_, cand.from_ + cand.width
        if config.symbolize_drop_float_entries and \
                _overlaps_kind(types, lo, hi, "float"):
            return Rejection(cand.from_, value, REJECT_FLOAT)
        if config.symbolize_string_preference == "string" and \
                _overlaps_kind(types, lo, hi, "string"):
            return Rejection(cand.from_, value, REJECT_STRING_OVERLAP)
    if image.in_code(value):
        if value in result.instructions:
            if config.symbolize_code_targets_entry_only:
                if entries is None:
                    entries = _known_entries(image, result, config)
                if _mid_function(value, entries):
                    return Rejection(cand.from_, value, REJECT_NOT_ENTRY)
            return Xref(cand.from_, value, kind_from + "2c", cand.width,
                        cand.origin)
        # inside code but not a recovered instruction: fall through to
        # the data test, which cannot pass either
    margin = config.symbolize_region_margin
    for sec in image.data_sections():
        if sec.vaddr - margin <= value < sec.end + margin:
            return Xref(cand.from_, value, kind_from + "2d", cand.width,
                        cand.origin)
    return Rejection(cand.from_, value, REJECT_OUT_OF_REGION)


_WIDE_FP = ("sd", "l")  # movsd / fldl-style eight-byte loads


def infer_types(image: BinaryImage, result, config) -> list[InferredType]:
    """Float tags from FP memory loads, string tags at referenced bytes.

    Extents never overlap; on collision the lower address wins, with
    floats preferred at equal addresses since dataflow evidence beats
    byte-shape guessing.
    """
    raw: list[InferredType] = []
    for insn in result.instructions.values():
        if insn.is_fp and insn.mem_access == "load":
            for value in insn.const_values():
                if image.section_at(value) is not None:
                    width = 8 if insn.mnemonic.endswith(_WIDE_FP) else 4
                    raw.append(InferredType(value, "float", width))
    for addr in sorted(_referenced_addrs(result)):
        sec = image.section_at(addr)
        if sec is None or sec.kind == "code":
            continue
        extent = string_extent(sec.data, addr - sec.vaddr)
        if extent:
            raw.append(InferredType(addr, "string", extent))
    order = {"float": 0, "string": 1}
    raw.sort(key=lambda t: (t.vaddr, order.get(t.kind, 2)))
    accepted: list[InferredType] = []
    last_end = None
    for t in raw:
        if last_end is not None and t.vaddr < last_end:
            continue
        if accepted and accepted[-1].vaddr == t.vaddr:
            continue
        accepted.append(t)
        last_end = t.vaddr + t.extent
    return accepted


def scan_address_tables(image: BinaryImage, result,
                        config) -> tuple[list[AddressTable], list[Xref]]:
    """Pointer units in data, grouped into consecutive-run tables.

    The sliding walk (type-based step length) and the plain strided
    scan share the refinement tail: mid-function target drops, splits
    at large target distances, and the minimum table size.
    """
    types = infer_types(image, result, config)
    entries = _entries_if_needed(image, result, config)
    tables, xrefs, _ = _scan_core(image, result, config, types, entries)
    return tables, xrefs


def _entries_if_needed(image, result, config) -> set[int]:
    if (config.symbolize_code_targets_entry_only
            or config.symbolize_drop_midfunction_entries):
        return _known_entries(image, result, config)
    return set()


def _scan_core(image, result, config, types, entries):
    rejections: list[Rejection] = []
    if config.symbolize_sliding_walk:
        units = _sliding_units(image, result, config, types, entries,
                               rejections)
    else:
        units = _strided_units(image, result, config, types, entries,
                               rejections)
    tables, xrefs = _group_units(image, result, config, units, entries,
                                 rejections)
    return tables, xrefs, rejections


def _strided_units(image, result, config, types, entries, rejections):
    units: list[tuple[int, int]] = []
    for cand in extract_candidates(image, result, config):
        if cand.origin != "data_unit":
            continue
        got = classify_candidate(cand, image, result, config, types=types,
                                 entries=entries)
        if isinstance(got, Xref):
            units.append((cand.from_, cand.value))
        elif got.reason != REJECT_OUT_OF_REGION:
            # out-of-region is the ordinary fate of non-pointer bytes;
            # only rule-driven drops are worth keeping as evidence
            rejections.append(got)
    return units


def _sliding_units(image, result, config, types, entries, rejections):
    """ANGR-style walk: try pointer, then string, then arithmetic
    sequence; whatever matches decides the jump."""
    word = image.word_size
    units: list[tuple[int, int]] = []
    floats = sorted((t.vaddr, t.vaddr + t.extent) for t in types
                    if t.kind == "float")
    for lo, hi, sec in _scan_regions(image, result, config):
        if sec is None:
            continue
        buf = sec.data
        pos = lo
        while pos < hi:
            if config.symbolize_drop_float_entries:
                f_end = next((f_hi for f_lo, f_hi in floats
                              if f_lo <= pos < f_hi), None)
                if f_end is not None:
                    rejections.append(Rejection(pos, 0, REJECT_FLOAT))
                    pos = f_end
                    continue
            off = pos - sec.vaddr
            if pos + word <= sec.end:
                value = int.from_bytes(buf[off:off + word], "little")
                cand = Candidate(pos, value, word, pos % word == 0,
                                 "data_unit")
                got = classify_candidate(cand, image, result, config,
                                         types=types, entries=entries)
                if isinstance(got, Xref):
                    units.append((pos, value))
                    pos += word
                    continue
            ext = string_extent(buf, off)
            if ext:
                pos += ext
                continue
            ext = arithmetic_extent(buf, off, word)
            if ext:
                pos += ext
                continue
            pos += 1
    return units


def _group_units(image, result, config, units, entries, rejections):
    word = image.word_size
    min_size = max(1, config.symbolize_min_table_size)
    split_at = config.symbolize_table_split_distance

    kept: list[tuple[int, int]] = []
    for addr, value in units:
        if config.symbolize_drop_midfunction_entries and \
                image.in_code(value) and value in result.instructions and \
                _mid_function(value, entries):
            rejections.append(Rejection(addr, value, REJECT_NOT_ENTRY))
            continue
        kept.append((addr, value))

    runs: list[list[tuple[int, int]]] = []
    for addr, value in sorted(kept):
        if runs and runs[-1][-1][0] + word == addr:
            runs[-1].append((addr, value))
        else:
            runs.append([(addr, value)])

    if split_at:
        split: list[list[tuple[int, int]]] = []
        for run_ in runs:
            part = [run_[0]]
            for prev, cur in zip(run_, run_[1:]):
                if abs(cur[1] - prev[1]) > split_at:
                    split.append(part)
                    part = []
                part.append(cur)
            split.append(part)
        runs = split

    tables: list[AddressTable] = []
    xrefs: list[Xref] = []
    for run_ in runs:
        if len(run_) < min_size:
            continue
        if len(run_) >= max(2, min_size):
            tables.append(AddressTable(run_[0][0],
                                       tuple(v for _, v in run_), word))
        origin = "address_table" if len(run_) >= 2 else "data_unit"
        for addr, value in run_:
            src = "c" if image.in_code(addr) else "d"
            dst = "c" if image.in_code(value) else "d"
            xrefs.append(Xref(addr, value, f"{src}2{dst}", word, origin))
    return tables, xrefs


def run(image: BinaryImage, result, config) -> SymbolizeResult:
    """The whole workflow: operand xrefs plus the data-unit scan."""
    types = infer_types(image, result, config)
    entries = _entries_if_needed(image, result, config)
    xrefs: list[Xref] = []
    rejections: list[Rejection] = []
    for cand in extract_candidates(image, result, config):
        if cand.origin != "operand":
            continue
        got = classify_candidate(cand, image, result, config, types=types,
                                 entries=entries)
        if isinstance(got, Xref):
            xrefs.append(got)
        else:
            rejections.append(got)
    tables, data_xrefs, scan_rejects = _scan_core(image, result, config,
                                                  types, entries)
    seen = {(x.from_, x.to, x.kind) for x in xrefs}
    for x in data_xrefs:
        key = (x.from_, x.to, x.kind)
        if key not in seen:
            seen.add(key)
            xrefs.append(x)
    xrefs.sort()
    rejections.extend(scan_rejects)
    return SymbolizeResult(xrefs, tables, types, rejections)
