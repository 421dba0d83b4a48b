"""Call frame information parsing, just deep enough for entry discovery.

The `.eh_frame` section is a chain of length-prefixed records: CIEs
describing shared decoding state and FDEs carrying one function range
each.  Function entry discovery only needs every FDE's initial location,
resolved through the pointer encoding its governing CIE declares, so
that is all this parser models.  Absolute and pc-relative encodings of
the common widths are supported.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import CfiParseError

# Pointer-encoding format nibble.
_PE_ABSPTR = 0x00
_PE_ULEB = 0x01
_PE_UDATA2 = 0x02
_PE_UDATA4 = 0x03
_PE_UDATA8 = 0x04
_PE_SLEB = 0x09
_PE_SDATA2 = 0x0A
_PE_SDATA4 = 0x0B
_PE_SDATA8 = 0x0C
# Application nibble.
_PE_PCREL = 0x10
_PE_OMIT = 0xFF


@dataclass(frozen=True)
class Cie:
    offset: int
    version: int
    augmentation: str
    code_align: int
    data_align: int
    return_reg: int
    fde_encoding: int


@dataclass(frozen=True)
class Fde:
    offset: int
    cie: Cie
    initial_location: int
    address_range: int


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def need(self, n: int) -> None:
        if self.pos + n > len(self.data):
            raise CfiParseError("record truncated", self.pos)

    def u8(self) -> int:
        self.need(1)
        v = self.data[self.pos]
        self.pos += 1
        return v

    def unsigned(self, n: int) -> int:
        self.need(n)
        v = int.from_bytes(self.data[self.pos:self.pos + n], "little")
        self.pos += n
        return v

    def signed(self, n: int) -> int:
        self.need(n)
        v = int.from_bytes(self.data[self.pos:self.pos + n], "little",
                           signed=True)
        self.pos += n
        return v

    def uleb(self) -> int:
        value = shift = 0
        while True:
            b = self.u8()
            value |= (b & 0x7F) << shift
            if not b & 0x80:
                return value
            shift += 7

    def sleb(self) -> int:
        value = shift = 0
        while True:
            b = self.u8()
            value |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                if b & 0x40:
                    value -= 1 << shift
                return value

    def cstring(self) -> str:
        end = self.data.find(b"\x00", self.pos)
        if end < 0:
            raise CfiParseError("unterminated augmentation string", self.pos)
        s = self.data[self.pos:end].decode("ascii", "replace")
        self.pos = end + 1
        return s


def _read_pointer(rd: _Reader, encoding: int, section_vaddr: int,
                  word_size: int) -> int:
    if encoding == _PE_OMIT:
        return 0
    where = section_vaddr + rd.pos
    fmt = encoding & 0x0F
    if fmt == _PE_ABSPTR:
        value = rd.unsigned(word_size)
    elif fmt == _PE_ULEB:
        value = rd.uleb()
    elif fmt == _PE_UDATA2:
        value = rd.unsigned(2)
    elif fmt == _PE_UDATA4:
        value = rd.unsigned(4)
    elif fmt == _PE_UDATA8:
        value = rd.unsigned(8)
    elif fmt == _PE_SLEB:
        value = rd.sleb()
    elif fmt == _PE_SDATA2:
        value = rd.signed(2)
    elif fmt == _PE_SDATA4:
        value = rd.signed(4)
    elif fmt == _PE_SDATA8:
        value = rd.signed(8)
    else:
        raise CfiParseError(f"unsupported pointer format {fmt:#x}", rd.pos)
    app = encoding & 0x70
    if app == _PE_PCREL:
        return (where + value) & ((1 << (word_size * 8)) - 1)
    if app == 0:
        return value
    raise CfiParseError(f"unsupported pointer application {app:#x}", rd.pos)


def parse_cfi(data: bytes, section_vaddr: int,
              word_size: int) -> list[Cie | Fde]:
    """All records in order.  Stops at the zero-length terminator."""
    out: list[Cie | Fde] = []
    cies: dict[int, Cie] = {}
    rd = _Reader(data, 0)
    while rd.pos < len(data):
        record_at = rd.pos
        length = rd.unsigned(4)
        if length == 0:
            break
        if length == 0xFFFFFFFF:
            length = rd.unsigned(8)
        body_end = rd.pos + length
        if body_end > len(data):
            raise CfiParseError("record length exceeds section", record_at)
        id_at = rd.pos
        cie_id = rd.unsigned(4)
        if cie_id == 0:
            cie = _parse_cie(rd, record_at)
            cies[record_at] = cie
            out.append(cie)
        else:
            cie_offset = id_at - cie_id
            cie = cies.get(cie_offset)
            if cie is None:
                raise CfiParseError("FDE references unknown CIE", record_at)
            initial = _read_pointer(rd, cie.fde_encoding, section_vaddr,
                                    word_size)
            span = _read_pointer(rd, cie.fde_encoding & 0x0F, section_vaddr,
                                 word_size)
            out.append(Fde(record_at, cie, initial, span))
        rd.pos = body_end
    return out


def _parse_cie(rd: _Reader, record_at: int) -> Cie:
    version = rd.u8()
    if version not in (1, 3, 4):
        raise CfiParseError(f"unsupported CIE version {version}", record_at)
    augmentation = rd.cstring()
    if version == 4:
        rd.u8()  # address size
        rd.u8()  # segment selector size
    code_align = rd.uleb()
    data_align = rd.sleb()
    return_reg = rd.uleb()
    fde_encoding = _PE_ABSPTR
    if augmentation.startswith("z"):
        aug_len = rd.uleb()
        aug_end = rd.pos + aug_len
        for letter in augmentation[1:]:
            if letter == "R":
                fde_encoding = rd.u8()
            elif letter == "L":
                rd.u8()
            elif letter == "P":
                enc = rd.u8()
                _read_pointer(rd, enc, 0, 8)
            else:
                break
        rd.pos = aug_end
    return Cie(record_at, version, augmentation, code_align, data_align,
               return_reg, fde_encoding)


def fde_starts(data: bytes, section_vaddr: int, word_size: int) -> list[int]:
    """Initial locations of every FDE, in record order."""
    return [r.initial_location for r in parse_cfi(data, section_vaddr,
                                                  word_size)
            if isinstance(r, Fde)]
