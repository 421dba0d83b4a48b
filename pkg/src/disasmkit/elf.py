"""Minimal ELF reader.

Parses just enough of the format for analysis work: the identification
bytes, section headers, and the static and dynamic symbol tables.  Only
little-endian x86 and x64 objects are accepted.  Program headers are
ignored on purpose; sections carry everything the pipeline consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import LoadError, UnsupportedArchitecture

ELF_MAGIC = b"\x7fELF"

EM_386 = 3
EM_X86_64 = 62

SHT_NOBITS = 8
SHT_SYMTAB = 2
SHT_DYNSYM = 11

SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4

STT_OBJECT = 1
STT_FUNC = 2


@dataclass(frozen=True)
class RawSection:
    name: str
    vaddr: int
    data: bytes
    executable: bool
    alloc: bool


@dataclass(frozen=True)
class RawSymbol:
    name: str
    vaddr: int
    size: int
    kind: str  # "func" | "obj" | "other"
    source: str  # "symtab" | "dynsym"


@dataclass(frozen=True)
class ElfFile:
    mode: str  # "x64" | "x86"
    entry: int
    sections: tuple[RawSection, ...]
    symbols: tuple[RawSymbol, ...]


def _cstr(blob: bytes, off: int) -> str:
    end = blob.find(b"\x00", off)
    if end < 0:
        end = len(blob)
    return blob[off:end].decode("utf-8", "replace")


def parse_elf(blob: bytes) -> ElfFile:
    if len(blob) < 16 or blob[:4] != ELF_MAGIC:
        raise LoadError("bad magic")
    ei_class = blob[4]
    ei_data = blob[5]
    if ei_data != 1:
        raise LoadError("unsupported EI_DATA (little-endian only)")
    if ei_class == 2:
        is64 = True
    elif ei_class == 1:
        is64 = False
    else:
        raise LoadError(f"unsupported EI_CLASS {ei_class}")

    try:
        if is64:
            (e_machine,) = struct.unpack_from("<H", blob, 18)
            (e_entry,) = struct.unpack_from("<Q", blob, 24)
            e_shoff, = struct.unpack_from("<Q", blob, 40)
            e_shentsize, e_shnum, e_shstrndx = struct.unpack_from("<HHH", blob, 58)
        else:
            (e_machine,) = struct.unpack_from("<H", blob, 18)
            (e_entry,) = struct.unpack_from("<I", blob, 24)
            e_shoff, = struct.unpack_from("<I", blob, 32)
            e_shentsize, e_shnum, e_shstrndx = struct.unpack_from("<HHH", blob, 46)
    except struct.error:
        raise LoadError("truncated ELF header") from None

    if e_machine == EM_X86_64:
        mode = "x64"
    elif e_machine == EM_386:
        mode = "x86"
    else:
        raise UnsupportedArchitecture(f"unsupported e_machine {e_machine}")
    if is64 and mode == "x86" or (not is64 and mode == "x64"):
        raise LoadError("e_machine does not match EI_CLASS")

    shdrs = []
    for i in range(e_shnum):
        off = e_shoff + i * e_shentsize
        try:
            if is64:
                (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
                 sh_link, _info, _align, sh_entsize) = struct.unpack_from(
                    "<IIQQQQIIQQ", blob, off)
            else:
                (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
                 sh_link, _info, _align, sh_entsize) = struct.unpack_from(
                    "<IIIIIIIIII", blob, off)
        except struct.error:
            raise LoadError(f"truncated section header {i} (e_shoff)") from None
        shdrs.append((sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
                      sh_link, sh_entsize))

    if e_shstrndx >= len(shdrs):
        raise LoadError("e_shstrndx out of range")
    _, _, _, _, str_off, str_size, _, _ = shdrs[e_shstrndx]
    if str_off + str_size > len(blob):
        raise LoadError("section name table out of range (sh_offset)")
    shstr = blob[str_off:str_off + str_size]

    sections = []
    for i, (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
            _link, _entsize) in enumerate(shdrs):
        if not sh_flags & SHF_ALLOC:
            continue
        if sh_type == SHT_NOBITS:
            data = bytes(sh_size)
        else:
            if sh_offset + sh_size > len(blob):
                raise LoadError(f"section {i} data out of range (sh_offset)")
            data = blob[sh_offset:sh_offset + sh_size]
        sections.append(RawSection(
            name=_cstr(shstr, sh_name),
            vaddr=sh_addr,
            data=data,
            executable=bool(sh_flags & SHF_EXECINSTR),
            alloc=True,
        ))

    symbols = []
    sym_fmt_size = 24 if is64 else 16
    for i, (sh_name, sh_type, _flags, _addr, sh_offset, sh_size,
            sh_link, sh_entsize) in enumerate(shdrs):
        if sh_type not in (SHT_SYMTAB, SHT_DYNSYM):
            continue
        source = "symtab" if sh_type == SHT_SYMTAB else "dynsym"
        if sh_link >= len(shdrs):
            raise LoadError(f"symbol table {i} sh_link out of range")
        _, _, _, _, stro, strs, _, _ = shdrs[sh_link]
        if stro + strs > len(blob):
            raise LoadError(f"string table for section {i} out of range (sh_offset)")
        strtab = blob[stro:stro + strs]
        entsize = sh_entsize or sym_fmt_size
        count = sh_size // entsize if entsize else 0
        for n in range(count):
            off = sh_offset + n * entsize
            try:
                if is64:
                    st_name, st_info, _other, _shndx, st_value, st_size = (
                        struct.unpack_from("<IBBHQQ", blob, off))
                else:
                    st_name, st_value, st_size, st_info, _other, _shndx = (
                        struct.unpack_from("<IIIBBH", blob, off))
            except struct.error:
                raise LoadError(f"truncated symbol {n} in section {i}") from None
            stt = st_info & 0xF
            if stt == STT_FUNC:
                kind = "func"
            elif stt == STT_OBJECT:
                kind = "obj"
            else:
                kind = "other"
            name = _cstr(strtab, st_name)
            if not name:
                continue
            symbols.append(RawSymbol(name, st_value, st_size, kind, source))

    return ElfFile(mode=mode, entry=e_entry,
                   sections=tuple(sections), symbols=tuple(symbols))
