"""Loaded program images and the region/seed views built from them.

Two container formats are understood: little-endian ELF objects and a
flat text format for hand-written fixtures.  Both load into the same
BinaryImage shape, so nothing downstream cares where bytes came from.

The flat format is line oriented, `#` starts a comment, all numbers are
hex without a 0x prefix:

    mode x64
    section .text 400000 code 554889e5c3
    section .rodata 401000 data 00010203
    symbol main 400000 5 func
    entry 400000
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from . import elf
from .errors import AddressError, LoadError


@dataclass(frozen=True)
class Section:
    name: str
    vaddr: int
    data: bytes
    kind: str  # "code" | "data"

    @property
    def end(self) -> int:
        return self.vaddr + len(self.data)

    def contains(self, vaddr: int) -> bool:
        return self.vaddr <= vaddr < self.end


@dataclass(frozen=True)
class SymbolEntry:
    name: str
    vaddr: int
    size: int
    kind: str  # "func" | "obj" | "other"
    source: str = "fixture"


@dataclass(frozen=True)
class BinaryImage:
    path: str
    mode: str  # "x64" | "x86"
    entry_point: int
    sections: tuple[Section, ...]
    symbols: tuple[SymbolEntry, ...]

    @property
    def word_size(self) -> int:
        return 8 if self.mode == "x64" else 4

    def section_at(self, vaddr: int) -> Section | None:
        for sec in self.sections:
            if sec.contains(vaddr):
                return sec
        return None

    def bytes_at(self, vaddr: int, size: int) -> bytes:
        sec = self.section_at(vaddr)
        if sec is None:
            raise AddressError(f"address {vaddr:#x} is not mapped")
        off = vaddr - sec.vaddr
        return sec.data[off:off + size]

    def read_word(self, vaddr: int, width: int) -> int:
        raw = self.bytes_at(vaddr, width)
        if len(raw) < width:
            raise AddressError(f"read of {width} bytes at {vaddr:#x} crosses section end")
        return int.from_bytes(raw, "little")

    def is_mapped(self, vaddr: int) -> bool:
        return self.section_at(vaddr) is not None

    def in_code(self, vaddr: int) -> bool:
        sec = self.section_at(vaddr)
        return sec is not None and sec.kind == "code"

    def in_data(self, vaddr: int) -> bool:
        sec = self.section_at(vaddr)
        return sec is not None and sec.kind == "data"

    def code_sections(self) -> list[Section]:
        return [s for s in self.sections if s.kind == "code"]

    def data_sections(self) -> list[Section]:
        return [s for s in self.sections if s.kind == "data"]

    def function_symbols(self) -> list[SymbolEntry]:
        return [s for s in self.symbols if s.kind == "func"]

    def symbol_named(self, name: str) -> SymbolEntry | None:
        for sym in self.symbols:
            if sym.name == name:
                return sym
        return None


@dataclass(frozen=True)
class Region:
    """A half-open [start, end) slice of executable bytes."""
    start: int
    end: int
    origin: str  # "symbol" | "gap"
    name: str = ""
    note: str = ""

    @property
    def size(self) -> int:
        return self.end - self.start


def _validate(image: BinaryImage) -> BinaryImage:
    prev: Section | None = None
    for sec in image.sections:
        if prev is not None and sec.vaddr < prev.end:
            raise LoadError(
                f"sections {prev.name} and {sec.name} overlap at {sec.vaddr:#x}")
        prev = sec
    if not image.in_code(image.entry_point):
        raise LoadError(
            f"entry point {image.entry_point:#x} is not in an executable section")
    return image


def _load_elf(path: str, blob: bytes) -> BinaryImage:
    parsed = elf.parse_elf(blob)
    sections = tuple(sorted(
        (Section(s.name, s.vaddr, s.data, "code" if s.executable else "data")
         for s in parsed.sections if s.alloc and len(s.data)),
        key=lambda s: s.vaddr))
    symbols = tuple(sorted(
        (SymbolEntry(s.name, s.vaddr, s.size, s.kind, s.source)
         for s in parsed.symbols),
        key=lambda s: (s.vaddr, s.name)))
    return _validate(BinaryImage(path, parsed.mode, parsed.entry, sections, symbols))


def _parse_hex(tok: str, what: str, lineno: int) -> int:
    try:
        return int(tok, 16)
    except ValueError:
        raise LoadError(f"line {lineno}: bad hex {what}: {tok!r}") from None


def _load_fixture(path: str, text: str) -> BinaryImage:
    mode = ""
    entry: int | None = None
    sections: list[Section] = []
    symbols: list[SymbolEntry] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kw = toks[0]
        if kw == "mode":
            if len(toks) != 2 or toks[1] not in ("x64", "x86"):
                raise LoadError(f"line {lineno}: mode must be x64 or x86")
            mode = toks[1]
        elif kw == "section":
            if len(toks) != 5 or toks[3] not in ("code", "data"):
                raise LoadError(f"line {lineno}: section <name> <vaddr> code|data <hex>")
            try:
                data = bytes.fromhex(toks[4])
            except ValueError:
                raise LoadError(f"line {lineno}: bad section bytes") from None
            sections.append(Section(toks[1], _parse_hex(toks[2], "vaddr", lineno),
                                    data, toks[3]))
        elif kw == "symbol":
            if len(toks) != 5 or toks[4] not in ("func", "obj"):
                raise LoadError(f"line {lineno}: symbol <name> <vaddr> <size> func|obj")
            symbols.append(SymbolEntry(toks[1], _parse_hex(toks[2], "vaddr", lineno),
                                       _parse_hex(toks[3], "size", lineno), toks[4]))
        elif kw == "entry":
            if len(toks) != 2:
                raise LoadError(f"line {lineno}: entry <vaddr>")
            entry = _parse_hex(toks[1], "entry", lineno)
        else:
            raise LoadError(f"line {lineno}: unknown directive {kw!r}")
    if not mode:
        raise LoadError("fixture is missing a mode directive")
    if entry is None:
        raise LoadError("fixture is missing an entry directive")
    if not sections:
        raise LoadError("fixture has no sections")
    return _validate(BinaryImage(
        path, mode, entry,
        tuple(sorted(sections, key=lambda s: s.vaddr)),
        tuple(sorted(symbols, key=lambda s: (s.vaddr, s.name)))))


def load_binary(path: str | os.PathLike) -> BinaryImage:
    """Load an ELF object or a flat fixture, auto-detected by content."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == elf.ELF_MAGIC:
        return _load_elf(path, blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError:
        raise LoadError("bad magic") from None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.split()[0] in ("mode", "section", "symbol", "entry"):
            return _load_fixture(path, text)
        break
    raise LoadError("bad magic")


def code_regions(image: BinaryImage) -> list[Region]:
    """Partition executable bytes into named symbol ranges and the gaps.

    Symbol ranges come first (address order), then gap ranges (address
    order).  Together they tile every executable byte exactly once.
    Function symbols with zero size contribute no range.  A symbol range
    overlapping the previous one is clipped to start after it and the
    clip is flagged in its note.
    """
    sym_regions: list[Region] = []
    for sec in image.code_sections():
        in_sec = [s for s in image.function_symbols()
                  if s.size > 0 and sec.contains(s.vaddr)]
        cursor = -1
        for sym in sorted(in_sec, key=lambda s: (s.vaddr, s.name)):
            start = sym.vaddr
            end = min(sym.vaddr + sym.size, sec.end)
            note = ""
            if start < cursor:
                note = "clipped: overlaps preceding symbol range"
                start = cursor
            if start >= end:
                continue
            sym_regions.append(Region(start, end, "symbol", sym.name, note))
            cursor = end

    gap_regions: list[Region] = []
    covered = sorted((r.start, r.end) for r in sym_regions)
    for sec in image.code_sections():
        pos = sec.vaddr
        for start, end in covered:
            if end <= sec.vaddr or start >= sec.end:
                continue
            if start > pos:
                gap_regions.append(Region(pos, start, "gap"))
            pos = max(pos, end)
        if pos < sec.end:
            gap_regions.append(Region(pos, sec.end, "gap"))

    sym_regions.sort(key=lambda r: r.start)
    gap_regions.sort(key=lambda r: r.start)
    return sym_regions + gap_regions


def symbol_seeds(image: BinaryImage) -> list[int]:
    """Descent seed addresses: the entry point plus every function symbol
    that lands in executable bytes.  Sorted, unique."""
    seeds = {image.entry_point}
    for sym in image.function_symbols():
        if image.in_code(sym.vaddr):
            seeds.add(sym.vaddr)
    return sorted(seeds)
