"""Shared test utilities: fixture construction, objdump reference runs."""

from __future__ import annotations

import re
import shutil
import subprocess
import tempfile
from pathlib import Path

from disasmkit.image import BinaryImage, load_binary

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "fixtures"

OBJDUMP = shutil.which("objdump")


def corpus_fixtures() -> list[Path]:
    return sorted(FIXTURE_DIR.glob("*.fix"))


def gt_path(fix: Path) -> Path:
    return fix.with_suffix(".gt")


def load_fixture(name: str) -> BinaryImage:
    return load_binary(FIXTURE_DIR / name)


class FixtureBuilder:
    """Accumulates sections/symbols and renders the flat fixture text."""

    def __init__(self, mode: str = "x64"):
        self.mode = mode
        self.sections: list[tuple[str, int, str, bytes]] = []
        self.symbols: list[tuple[str, int, int, str]] = []
        self.entry: int | None = None

    def section(self, name: str, vaddr: int, kind: str, data: bytes) -> "FixtureBuilder":
        self.sections.append((name, vaddr, kind, data))
        return self

    def symbol(self, name: str, vaddr: int, size: int, kind: str = "func") -> "FixtureBuilder":
        self.symbols.append((name, vaddr, size, kind))
        return self

    def entry_at(self, vaddr: int) -> "FixtureBuilder":
        self.entry = vaddr
        return self

    def text(self) -> str:
        lines = [f"mode {self.mode}"]
        for name, vaddr, kind, data in self.sections:
            lines.append(f"section {name} {vaddr:x} {kind} {data.hex()}")
        for name, vaddr, size, kind in self.symbols:
            lines.append(f"symbol {name} {vaddr:x} {size:x} {kind}")
        if self.entry is None:
            raise ValueError("entry not set")
        lines.append(f"entry {self.entry:x}")
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path.write_text(self.text())
        return path

    def build(self, tmp_path: Path, name: str = "img.fix") -> BinaryImage:
        return load_binary(self.write(tmp_path / name))


def build_elf(mode: str, sections: list[tuple[str, int, str, bytes]],
              symbols: list[tuple[str, int, int, str]], entry: int,
              *, dynsym: list[tuple[str, int, int, str]] | None = None) -> bytes:
    """Emit a minimal static ELF with the given alloc sections and symbols.

    sections: (name, vaddr, "code"|"data", bytes); symbols: (name, vaddr,
    size, "func"|"obj").  Section data is laid out after the header, then
    string/symbol tables, then the section header table.
    """
    import struct

    is64 = mode == "x64"
    ehsize = 64 if is64 else 52
    shentsize = 64 if is64 else 40
    symentsize = 24 if is64 else 16

    shstr = bytearray(b"\x00")

    def shname(n: str) -> int:
        off = len(shstr)
        shstr.extend(n.encode() + b"\x00")
        return off

    strtab = bytearray(b"\x00")

    def symname(n: str) -> int:
        off = len(strtab)
        strtab.extend(n.encode() + b"\x00")
        return off

    def sym_bytes(table):
        blob = bytearray(bytes(symentsize))  # null symbol
        for name, vaddr, size, kind in table:
            st_info = 0x12 if kind == "func" else 0x11
            if is64:
                blob += struct.pack("<IBBHQQ", symname(name), st_info, 0, 1,
                                    vaddr, size)
            else:
                blob += struct.pack("<IIIBBH", symname(name), vaddr, size,
                                    st_info, 0, 1)
        return bytes(blob)

    # plan section header entries: null + alloc + symtab(+dynsym) + strtab + shstrtab
    records = []  # (name_off, type, flags, addr, data, link, entsize)
    for name, vaddr, kind, data in sections:
        flags = 0x6 if kind == "code" else 0x2
        records.append([shname(name), 1, flags, vaddr, data, 0, 0])
    symtab_blob = sym_bytes(symbols)
    sym_idx = 1 + len(records)
    strtab_idx = sym_idx + 1 + (1 if dynsym is not None else 0)
    records.append([shname(".symtab"), 2, 0, 0, symtab_blob, strtab_idx, symentsize])
    if dynsym is not None:
        records.append([shname(".dynsym"), 11, 0, 0, sym_bytes(dynsym),
                        strtab_idx, symentsize])
    records.append([shname(".strtab"), 3, 0, 0, bytes(strtab), 0, 0])
    shstr_idx = strtab_idx + 1
    records.append([shname(".shstrtab"), 3, 0, 0, bytes(shstr), 0, 0])

    payload = bytearray()
    offsets = []
    pos = ehsize
    for rec in records:
        offsets.append(pos)
        payload.extend(rec[4])
        pos += len(rec[4])
    shoff = pos

    if is64:
        hdr = b"\x7fELF" + bytes([2, 1, 1, 0]) + bytes(8)
        hdr += struct.pack("<HHIQQQIHHHHHH", 2, 62, 1, entry, 0, shoff, 0,
                           ehsize, 0, 0, shentsize, len(records) + 1, shstr_idx)
    else:
        hdr = b"\x7fELF" + bytes([1, 1, 1, 0]) + bytes(8)
        hdr += struct.pack("<HHIIIIIHHHHHH", 2, 3, 1, entry, 0, shoff, 0,
                           ehsize, 0, 0, shentsize, len(records) + 1, shstr_idx)
    blob = bytearray(hdr) + payload

    sh = bytearray(bytes(shentsize))  # null entry
    for rec, off in zip(records, offsets):
        name_off, sh_type, flags, addr, data, link, entsize = rec
        if is64:
            sh += struct.pack("<IIQQQQIIQQ", name_off, sh_type, flags, addr,
                              off, len(data), link, 0, 1, entsize)
        else:
            sh += struct.pack("<IIIIIIIIII", name_off, sh_type, flags, addr,
                              off, len(data), link, 0, 1, entsize)
    return bytes(blob + sh)


_LINE = re.compile(r"^\s*([0-9a-f]+):\s*((?:[0-9a-f]{2} )+)\s*(.*)$")


def objdump_run(data: bytes, vaddr: int, mode: str,
                start: int | None = None) -> list[tuple[int, int, str]]:
    """Reference disassembly of a raw byte buffer.

    Returns (address, length, text) triples in address order.  Invalid
    positions come back with text '(bad)'.
    """
    assert OBJDUMP, "objdump not available"
    arch = "i386:x86-64" if mode == "x64" else "i386"
    with tempfile.NamedTemporaryFile(suffix=".bin") as fh:
        fh.write(data)
        fh.flush()
        cmd = [OBJDUMP, "-D", "-b", "binary", "-m", arch,
               f"--adjust-vma={vaddr:#x}", "--insn-width=16", fh.name]
        if start is not None:
            cmd.insert(1, f"--start-address={start:#x}")
        out = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
    rows = []
    for line in out.splitlines():
        m = _LINE.match(line)
        if not m:
            continue
        addr = int(m.group(1), 16)
        length = len(m.group(2).split())
        rows.append((addr, length, m.group(3).strip()))
    # objdump splits >16 byte runs; merge continuations (no mnemonic text)
    merged: list[tuple[int, int, str]] = []
    for addr, length, text in rows:
        if not text and merged and merged[-1][0] + merged[-1][1] == addr:
            pa, pl, pt = merged[-1]
            merged[-1] = (pa, pl + length, pt)
        else:
            merged.append((addr, length, text))
    return merged


_FLOW_BY_MNEMONIC = {
    "ret": "ret", "retq": "ret", "retw": "ret", "retf": "ret",
    "iret": "ret", "iretw": "ret", "iretd": "ret", "iretq": "ret",
    "lret": "ret", "lretw": "ret", "lretq": "ret",
    "hlt": "halt", "ud2": "halt", "int3": "halt", "icebp": "halt", "int1": "halt",
}


_BARE_PREFIX_ROWS = {"lock", "data16", "data32", "addr16", "addr32", "repz",
                     "repnz", "rep", "bnd", "notrack", "cs", "ds", "es", "ss",
                     "fs", "gs"}


def reference_artifact(text: str) -> bool:
    """True for reference rows that are display artifacts, not instructions.

    Covers undecodable bytes and dangling-prefix runs the reference tool
    prints as standalone rows.
    """
    if not text or "(bad)" in text or ".byte" in text:
        return True
    toks = text.split()
    return len(toks) == 1 and (toks[0].startswith("rex")
                               or toks[0] in _BARE_PREFIX_ROWS)


def raw_image(mode: str = "x64", entry: int | None = None,
              sections=(), symbols=()):
    """BinaryImage assembled directly in memory, no file round trip.

    sections: (name, vaddr, kind, data) tuples; symbols: (name, vaddr,
    size, kind).  Entry defaults to the first section's start.
    """
    from disasmkit.image import Section, SymbolEntry
    secs = [Section(n, v, bytes(d), k) for (n, v, k, d) in sections]
    syms = [SymbolEntry(n, v, sz, k) for (n, v, sz, k) in symbols]
    if entry is None:
        entry = secs[0].vaddr
    return BinaryImage("<mem>", mode, entry, secs, syms)


def uleb(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def sleb(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        done = (value == 0 and not b & 0x40) or (value == -1 and b & 0x40)
        out.append(b if done else b | 0x80)
        if done:
            return bytes(out)


class CfiBuilder:
    """Emits `.eh_frame` bytes record by record, tracking expected starts.

    Kept deliberately separate from the parser under test: this side
    encodes, the package side decodes.
    """

    def __init__(self, section_vaddr: int, word_size: int = 8):
        self.section_vaddr = section_vaddr
        self.word_size = word_size
        self.blob = bytearray()
        self.cie_offset: int | None = None
        self.encoding = 0x00
        self.has_z = False
        self.expected_starts: list[int] = []

    def _record(self, body: bytes, *, pad_to: int = 4) -> int:
        if len(body) % pad_to:
            body += b"\x00" * (pad_to - len(body) % pad_to)
        offset = len(self.blob)
        self.blob += len(body).to_bytes(4, "little") + body
        return offset

    def cie(self, encoding: int = 0x00, *, augmentation: str = "zR",
            version: int = 1) -> "CfiBuilder":
        body = bytearray([version])
        body += augmentation.encode() + b"\x00"
        body += uleb(1) + sleb(-8) + uleb(16)
        if augmentation.startswith("z"):
            aug = bytes([encoding]) if "R" in augmentation else b""
            body += uleb(len(aug)) + aug
        body += b"\x0c\x07\x08"  # def_cfa rsp, 8 (never inspected)
        self.cie_offset = self._record(b"\x00\x00\x00\x00" + bytes(body))
        self.encoding = encoding
        self.has_z = augmentation.startswith("z")
        return self

    def _pointer(self, value: int, encoding: int, field_at: int) -> bytes:
        fmt = encoding & 0x0F
        if encoding & 0x10:
            value -= self.section_vaddr + field_at
        if fmt == 0x00:
            return value.to_bytes(self.word_size, "little", signed=value < 0)
        if fmt == 0x03:
            return (value & 0xFFFFFFFF).to_bytes(4, "little")
        if fmt == 0x0B:
            return value.to_bytes(4, "little", signed=True)
        if fmt == 0x04:
            return value.to_bytes(8, "little")
        if fmt == 0x0C:
            return value.to_bytes(8, "little", signed=True)
        raise ValueError(f"builder has no encoder for {encoding:#x}")

    def fde(self, start: int, span: int) -> "CfiBuilder":
        assert self.cie_offset is not None, "emit a CIE first"
        record_at = len(self.blob)
        id_field_at = record_at + 4
        body = (id_field_at - self.cie_offset).to_bytes(4, "little")
        pc_field_at = id_field_at + 4
        body += self._pointer(start, self.encoding, pc_field_at)
        body += self._pointer(span, self.encoding & 0x0F,
                              pc_field_at + len(body) - 4)
        if self.has_z:
            body += uleb(0)
        self._record(body)
        self.expected_starts.append(start)
        return self

    def terminator(self) -> "CfiBuilder":
        self.blob += b"\x00\x00\x00\x00"
        return self

    def data(self) -> bytes:
        return bytes(self.blob)


def objdump_flow(text: str) -> str:
    """Independent mnemonic-to-flow mapping for reference output."""
    toks = text.split()
    prefixes = {"repz", "repnz", "rep", "lock", "data16", "data32", "addr16",
                "addr32", "cs", "ds", "es", "ss", "fs", "gs", "bnd", "notrack"}
    while len(toks) > 1 and (toks[0] in prefixes or toks[0].startswith("rex")):
        toks = toks[1:]
    if not toks:
        return "fallthrough"
    mn = toks[0].split(",")[0]  # drop ",pt"/",pn" branch-hint suffixes
    if mn in _FLOW_BY_MNEMONIC:
        return _FLOW_BY_MNEMONIC[mn]
    if mn in ("call", "callq", "callw", "lcall", "lcallw"):
        return "call_indirect" if "*" in text else "call_direct"
    if mn in ("jmp", "jmpq", "jmpw", "ljmp", "ljmpw"):
        return "jump_indirect" if "*" in text else "jump_direct"
    if mn.startswith("j") or mn.startswith("loop"):
        return "cond_jump"
    return "fallthrough"
