"""Instruction decoding for 32- and 64-bit x86.

The decoder is deliberately bounded: it covers the one- and two-byte
opcode maps that compiled C and C++ code actually exercises (integer
ALU forms, moves, stack ops, control transfers, the nop family, the
common SSE scalar forms, x87 loads) and reports anything else as an
InvalidOpcode carrying the offending byte.  Everything downstream
consumes the normalized Instruction shape, never raw bytes, so a
different backend can be injected through DecoderBackend without
touching any analysis.

Rendering follows AT&T syntax as binutils prints it, one fixed dialect
everywhere.  Immediates and displacements are kept as integers on the
instruction so analyses never re-parse text.

Value conventions: `imm` and immediate entries of `const_operands` are
unsigned modulo the operand size (so an all-ones sentinel compares
equal to 0xffffffff); memory displacements stay signed as encoded;
rip-relative references are resolved to their absolute target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

FLOW_FALLTHROUGH = "fallthrough"
FLOW_CALL = "call_direct"
FLOW_CALL_INDIRECT = "call_indirect"
FLOW_JUMP = "jump_direct"
FLOW_JUMP_INDIRECT = "jump_indirect"
FLOW_COND = "cond_jump"
FLOW_RET = "ret"
FLOW_HALT = "halt"

NON_FALLTHROUGH = {FLOW_JUMP, FLOW_JUMP_INDIRECT, FLOW_RET, FLOW_HALT}

_REG64 = ("rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
          "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15")
_REG32 = ("eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi",
          "r8d", "r9d", "r10d", "r11d", "r12d", "r13d", "r14d", "r15d")
_REG16 = ("ax", "cx", "dx", "bx", "sp", "bp", "si", "di",
          "r8w", "r9w", "r10w", "r11w", "r12w", "r13w", "r14w", "r15w")
_REG8_REX = ("al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil",
             "r8b", "r9b", "r10b", "r11b", "r12b", "r13b", "r14b", "r15b")
_REG8 = ("al", "cl", "dl", "bl", "ah", "ch", "dh", "bh")

_CC = ("o", "no", "b", "ae", "e", "ne", "be", "a",
       "s", "ns", "p", "np", "l", "ge", "le", "g")

_SEG_PREFIX = {0x26: "es", 0x2E: "cs", 0x36: "ss", 0x3E: "ds", 0x64: "fs", 0x65: "gs"}

_LEGACY_PREFIX = frozenset(_SEG_PREFIX) | {0x66, 0x67, 0xF0, 0xF2, 0xF3, 0x9B}


def _is_prefix_byte(b: int, mode: str) -> bool:
    if b in _LEGACY_PREFIX:
        return True
    return mode == "x64" and 0x40 <= b <= 0x4F

_ARITH = ("add", "or", "adc", "sbb", "and", "sub", "xor", "cmp")
_SHIFT = ("rol", "ror", "rcl", "rcr", "shl", "shr", "sal", "sar")

# Valid in 32-bit mode, removed or repurposed as prefixes in 64-bit mode.
_X86_ONLY = {0x06, 0x07, 0x0E, 0x16, 0x17, 0x1E, 0x1F, 0x27, 0x2F, 0x37, 0x3F,
             0x60, 0x61, 0x62, 0x82, 0x9A, 0xC4, 0xC5, 0xCE, 0xD4, 0xD5, 0xEA}


@dataclass(frozen=True)
class MemExpr:
    base: str | None = None
    index: str | None = None
    scale: int = 1
    disp: int = 0
    segment: str | None = None

    def is_table_form(self) -> bool:
        """True for [const + reg * scale]: displacement with a scaled
        index and no other base register."""
        return self.base is None and self.index is not None


@dataclass(frozen=True)
class InvalidOpcode:
    vaddr: int
    byte: int


@dataclass(frozen=True)
class Instruction:
    vaddr: int
    length: int
    mnemonic: str
    text: str
    flow: str
    raw: bytes = b""
    branch_target: int | None = None
    const_operands: tuple[tuple[int, int], ...] = ()  # (position, value)
    mem: MemExpr | None = None
    mem_access: str = "none"  # none | load | store | rmw | addr
    dest_reg: str | None = None
    src_reg: str | None = None
    imm: int | None = None
    op_size: int = 32
    cc: str = ""
    is_fp: bool = False

    @property
    def end(self) -> int:
        return self.vaddr + self.length

    @property
    def reads_memory(self) -> MemExpr | None:
        if self.mem is not None and self.mem_access in ("load", "rmw"):
            return self.mem
        return None

    def const_values(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.const_operands)


class DecoderBackend(Protocol):
    def decode(self, data: bytes, offset: int, vaddr: int,
               mode: str) -> Instruction | InvalidOpcode: ...


def classify(insn: Instruction) -> str:
    """Control-flow class of a decoded instruction.

    Derived from the mnemonic and operand shape so it holds for any
    backend that fills those fields; the built-in backend precomputes
    the same value into Instruction.flow.
    """
    m = insn.mnemonic
    if m == "call":
        return FLOW_CALL if insn.branch_target is not None else FLOW_CALL_INDIRECT
    if m == "lcall":
        return FLOW_CALL
    if m == "ljmp":
        return FLOW_JUMP
    if m == "jmp":
        return FLOW_JUMP if insn.branch_target is not None else FLOW_JUMP_INDIRECT
    if m.startswith("j") or m in ("loop", "loope", "loopne"):
        return FLOW_COND
    if m in ("ret", "retf", "iret"):
        return FLOW_RET
    if m in ("hlt", "ud2", "int3"):
        return FLOW_HALT
    return FLOW_FALLTHROUGH


class _Reject(Exception):
    def __init__(self, byte: int):
        self.byte = byte


class _Cursor:
    __slots__ = ("data", "pos", "start", "limit")

    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.start = offset
        self.pos = offset
        self.limit = min(len(data), offset + 15)

    def u8(self) -> int:
        if self.pos >= self.limit:
            raise _Reject(self.data[self.start] if self.start < len(self.data) else 0)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def peek(self) -> int:
        if self.pos >= self.limit:
            raise _Reject(self.data[self.start] if self.start < len(self.data) else 0)
        return self.data[self.pos]

    def bytes(self, n: int) -> bytes:
        if self.pos + n > self.limit:
            raise _Reject(self.data[self.start])
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        return raw

    def imm(self, n: int, signed: bool = False) -> int:
        return int.from_bytes(self.bytes(n), "little", signed=signed)

    def length(self) -> int:
        return self.pos - self.start


def _hex(v: int) -> str:
    return f"0x{v:x}" if v >= 0 else f"-0x{-v:x}"


class _TableDecoder:
    """The built-in bounded decoder."""

    def decode(self, data: bytes, offset: int, vaddr: int,
               mode: str) -> Instruction | InvalidOpcode:
        try:
            return self._decode(data, offset, vaddr, mode)
        except _Reject as rej:
            return InvalidOpcode(vaddr, rej.byte)

    # -- helpers ------------------------------------------------------

    @staticmethod
    def _reg(idx: int, size: int, rex: int | None) -> str:
        if size == 64:
            return _REG64[idx]
        if size == 32:
            return _REG32[idx]
        if size == 16:
            return _REG16[idx]
        if rex is not None:
            return _REG8_REX[idx]
        return _REG8[idx & 7]

    @staticmethod
    def _family(idx: int, mode: str) -> str:
        return _REG64[idx] if mode == "x64" else _REG32[idx]

    def _modrm(self, cur: _Cursor, mode: str, rex: int, asize: int,
               seg: str | None):
        """Returns (reg_field, rm_reg_index or None, MemExpr or None)."""
        modrm = cur.u8()
        mod = modrm >> 6
        reg = ((rex >> 2) & 1) << 3 | ((modrm >> 3) & 7)
        rm = modrm & 7
        if mod == 3:
            return reg, ((rex & 1) << 3 | rm), None
        if asize == 16:
            # legacy 16-bit addressing: no SIB byte, fixed base/index pairs
            pairs = (("bx", "si"), ("bx", "di"), ("bp", "si"), ("bp", "di"),
                     ("si", None), ("di", None), ("bp", None), ("bx", None))
            disp = 0
            if mod == 0 and rm == 6:
                b16 = i16 = None
                disp = cur.imm(2, signed=True)
            else:
                b16, i16 = pairs[rm]
                if mod == 1:
                    disp = cur.imm(1, signed=True)
                elif mod == 2:
                    disp = cur.imm(2, signed=True)
            return reg, None, MemExpr(b16, i16, 1, disp, seg)
        base = index = None
        scale = 1
        disp = 0
        if rm == 4:
            sib = cur.u8()
            scale = 1 << (sib >> 6)
            idx = ((rex >> 1) & 1) << 3 | ((sib >> 3) & 7)
            if idx != 4:
                index = self._family(idx, mode)
            b = (rex & 1) << 3 | (sib & 7)
            if (sib & 7) == 5 and mod == 0:
                disp = cur.imm(4, signed=True)
            else:
                base = self._family(b, mode)
        elif rm == 5 and mod == 0:
            disp = cur.imm(4, signed=True)
            if mode == "x64":
                base = "rip"
        else:
            base = self._family((rex & 1) << 3 | rm, mode)
        if mod == 1:
            disp = cur.imm(1, signed=True)
        elif mod == 2:
            disp = cur.imm(4, signed=True)
        return reg, None, MemExpr(base, index, scale, disp, seg)

    @staticmethod
    def _fmt_mem(m: MemExpr) -> str:
        s = ""
        if m.segment:
            s += f"%{m.segment}:"
        if m.disp or (m.base is None and m.index is None):
            s += _hex(m.disp) if m.disp >= 0 else f"-0x{-m.disp:x}"
        if m.base or m.index:
            s += "("
            if m.base:
                s += f"%{m.base}"
            if m.index:
                s += f",%{m.index},{m.scale}"
            s += ")"
        return s

    # -- main ---------------------------------------------------------

    @staticmethod
    def _x87_follows(data: bytes, cur: _Cursor, mode: str) -> bool:
        j = cur.pos + 1
        while j < cur.limit and _is_prefix_byte(data[j], mode):
            j += 1
        return j < cur.limit and 0xD8 <= data[j] <= 0xDF

    def _decode(self, data: bytes, offset: int, vaddr: int, mode: str):
        cur = _Cursor(data, offset)
        osize_override = False
        asize_override = False
        rep = 0  # 0xF2 or 0xF3
        seg: str | None = None
        rex = 0
        have_rex = False

        while True:
            b = cur.peek()
            if mode == "x64" and 0x40 <= b <= 0x4F:
                # REX binds only when it is the final prefix.  When another
                # prefix byte (or nothing) follows, the run up to and
                # including this byte is a dead-prefix unit; emitting it as
                # one fallthrough pseudo-instruction keeps the byte stream
                # aligned with reference disassemblers.
                cur.u8()
                rex = b & 0xF
                have_rex = True
                nxt = data[cur.pos] if cur.pos < cur.limit else None
                if nxt is None or _is_prefix_byte(nxt, mode):
                    bits = "".join(l for l, m in
                                   (("W", 8), ("R", 4), ("X", 2), ("B", 1))
                                   if rex & m)
                    name = "rex" + ("." + bits if bits else "")
                    n = cur.length()
                    return Instruction(vaddr, n, "rex", name,
                                       FLOW_FALLTHROUGH,
                                       raw=bytes(data[offset:offset + n]))
                continue
            elif b == 0x66:
                osize_override = True
                rex, have_rex = 0, False
            elif b == 0x67:
                asize_override = True
                rex, have_rex = 0, False
            elif b in (0xF2, 0xF3):
                rep = b
                rex, have_rex = 0, False
            elif b in _SEG_PREFIX:
                seg = _SEG_PREFIX[b]
                rex, have_rex = 0, False
            elif b == 0xF0:
                rex, have_rex = 0, False  # lock
            elif b == 0x9B and self._x87_follows(data, cur, mode):
                # fwait fuses with a following x87 opcode (possibly behind
                # more prefixes) into one instruction
                rex, have_rex = 0, False
            else:
                break
            cur.u8()

        op = cur.u8()
        if mode == "x64" and op in _X86_ONLY:
            raise _Reject(op)

        osize = 32
        if osize_override:
            osize = 16
        if rex & 8:
            osize = 64
        if mode == "x64":
            asize = 32 if asize_override else 64
        else:
            asize = 16 if asize_override else 32
        rexarg = rex if have_rex else None

        def fin(mnemonic: str, text_ops: list[str], *, flow: str | None = None,
                target: int | None = None, consts=(), mem: MemExpr | None = None,
                access: str = "none", dest: str | None = None,
                src: str | None = None, imm: int | None = None,
                opsz: int | None = None, cc: str = "", fp: bool = False,
                text: str | None = None) -> Instruction:
            length = cur.length()
            consts = list(consts)
            if mem is not None and mem.base == "rip":
                # the referenced address is pc-relative; resolve it now
                resolved = vaddr + length + mem.disp
                consts.append((0, resolved))
                if mnemonic == "lea" and imm is None:
                    imm = resolved
            if text is None:
                text = mnemonic
                if text_ops:
                    text += " " + ",".join(text_ops)
            insn = Instruction(
                vaddr=vaddr, length=length, mnemonic=mnemonic, text=text,
                flow=flow if flow is not None else FLOW_FALLTHROUGH,
                raw=bytes(data[offset:offset + length]),
                branch_target=target,
                const_operands=tuple(consts),
                mem=mem, mem_access=access, dest_reg=dest, src_reg=src,
                imm=imm, op_size=opsz if opsz is not None else osize,
                cc=cc, is_fp=fp)
            if flow is None:
                object.__setattr__(insn, "flow", classify(insn))
            return insn

        def fam(idx: int) -> str:
            return self._family(idx, mode)

        def mask(v: int, size: int) -> int:
            return v & ((1 << size) - 1)

        if mode == "x86" and op in _X86_ONLY:
            segpp = {0x06: ("push", "es"), 0x07: ("pop", "es"),
                     0x0E: ("push", "cs"), 0x16: ("push", "ss"),
                     0x17: ("pop", "ss"), 0x1E: ("push", "ds"),
                     0x1F: ("pop", "ds")}
            if op in segpp:
                name, sreg = segpp[op]
                return fin(name, [f"%{sreg}"])
            if op in (0x27, 0x2F, 0x37, 0x3F):
                return fin({0x27: "daa", 0x2F: "das",
                            0x37: "aaa", 0x3F: "aas"}[op], [])
            if op in (0xD4, 0xD5):
                cur.imm(1)
                return fin("aam" if op == 0xD4 else "aad", [])
            if op in (0xC4, 0xC5):
                _, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
                if mem is None:
                    raise _Reject(op)
                return fin("les" if op == 0xC4 else "lds", [self._fmt_mem(mem)],
                           mem=mem, access="load")
            if op == 0xEA:
                off = cur.imm(2) if osize == 16 else cur.imm(4)
                sel = cur.imm(2)
                return fin("ljmp", [f"$0x{sel:x}", f"$0x{off:x}"],
                           flow=FLOW_JUMP, target=off)
            # 0x60/0x61/0x62/0x82/0x9A/0xCE fall through to their handlers

        # one-byte ALU block: op r/m,r ; op r,r/m ; op acc,imm
        if op < 0x40 and (op & 7) < 6 and op not in (0x0F,):
            name = _ARITH[op >> 3]
            variant = op & 7
            if variant in (0, 1, 2, 3):
                width = 8 if variant in (0, 2) else osize
                reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
                regname = self._reg(reg, width, rexarg)
                direction_rm_dest = variant in (0, 1)
                if rmreg is not None:
                    rmname = self._reg(rmreg, width, rexarg)
                    a, b2 = (regname, rmname) if direction_rm_dest else (rmname, regname)
                    return fin(name, [f"%{a}", f"%{b2}"],
                               dest=fam(rmreg if direction_rm_dest else reg),
                               src=fam(reg if direction_rm_dest else rmreg),
                               opsz=width)
                consts = _mem_consts(mem)
                access = "rmw" if direction_rm_dest and name != "cmp" else "load"
                if direction_rm_dest:
                    return fin(name, [f"%{regname}", self._fmt_mem(mem)],
                               mem=mem, access=access, src=fam(reg),
                               opsz=width, consts=consts)
                return fin(name, [self._fmt_mem(mem), f"%{regname}"],
                           mem=mem, access="load", dest=fam(reg),
                           opsz=width, consts=consts)
            if variant == 4:  # acc, imm8
                v = cur.imm(1)
                return fin(name, [f"${_hex(v)}", "%al"], imm=v, dest=fam(0),
                           consts=[(0, v)], opsz=8)
            # variant 5: acc, imm
            n = 2 if osize == 16 else 4
            v = mask(cur.imm(n, signed=True), osize)
            acc = self._reg(0, osize, rexarg)
            return fin(name, [f"${_hex(v)}", f"%{acc}"], imm=v, dest=fam(0),
                       consts=[(0, v)])

        if op == 0x0F:
            return self._decode_0f(cur, data, offset, vaddr, mode, rex, have_rex,
                                   osize, asize, osize_override, rep, seg,
                                   fin, fam)

        if 0x40 <= op <= 0x4F and mode == "x86":  # inc/dec reg
            name = "inc" if op < 0x48 else "dec"
            r = op & 7
            return fin(name, [f"%{self._reg(r, osize, rexarg)}"], dest=fam(r))

        if 0x50 <= op <= 0x57:
            r = (rex & 1) << 3 | (op & 7)
            sz = 64 if mode == "x64" else 32
            return fin("push", [f"%{self._reg(r, sz, rexarg)}"], src=fam(r), opsz=sz)
        if 0x58 <= op <= 0x5F:
            r = (rex & 1) << 3 | (op & 7)
            sz = 64 if mode == "x64" else 32
            return fin("pop", [f"%{self._reg(r, sz, rexarg)}"], dest=fam(r), opsz=sz)

        if op in (0x60, 0x61):  # x86 pusha/popa
            return fin("pusha" if op == 0x60 else "popa", [])
        if op == 0x62:  # x86 bound
            _, _, mem = self._modrm(cur, mode, rex, asize, seg)
            return fin("bound", [self._fmt_mem(mem) if mem else ""], mem=mem,
                       access="load")

        if op == 0x63:
            if mode == "x64":  # movslq r/m32 -> r64
                reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
                dst = self._reg(reg, 64, rexarg)
                if rmreg is not None:
                    return fin("movslq", [f"%{self._reg(rmreg, 32, rexarg)}", f"%{dst}"],
                               dest=fam(reg), src=fam(rmreg), opsz=64)
                ins = fin("movslq", [self._fmt_mem(mem), f"%{dst}"], mem=mem,
                          access="load", dest=fam(reg), opsz=64,
                          consts=_mem_consts(mem))
                return ins
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)  # x86 arpl
            return fin("arpl", [], mem=mem, access="rmw" if mem else "none")

        if op == 0x68:
            n = 2 if osize == 16 else 4
            v = mask(cur.imm(n, signed=True), 64 if mode == "x64" else 32)
            return fin("push", [f"${_hex(v)}"], imm=v, consts=[(0, v)],
                       opsz=64 if mode == "x64" else 32)
        if op == 0x6A:
            v = mask(cur.imm(1, signed=True), 64 if mode == "x64" else 32)
            return fin("push", [f"${_hex(v)}"], imm=v, consts=[(0, v)],
                       opsz=64 if mode == "x64" else 32)
        if op in (0x69, 0x6B):
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            v = cur.imm(1 if op == 0x6B else (2 if osize == 16 else 4), signed=True)
            v = mask(v, osize)
            dst = self._reg(reg, osize, rexarg)
            srctxt = (f"%{self._reg(rmreg, osize, rexarg)}" if rmreg is not None
                      else self._fmt_mem(mem))
            ins = fin("imul", [f"${_hex(v)}", srctxt, f"%{dst}"], imm=v,
                      dest=fam(reg), mem=mem, access="load" if mem else "none",
                      consts=[(0, v)] + (_mem_consts(mem) if mem else []))
            return ins
        if 0x6C <= op <= 0x6F:
            return fin(("insb", "insl", "outsb", "outsl")[op - 0x6C], [])

        if 0x70 <= op <= 0x7F:
            d = cur.imm(1, signed=True)
            tgt = vaddr + cur.length() + d
            cc = _CC[op & 0xF]
            return fin("j" + cc, [f"{tgt:x}"], flow=FLOW_COND, target=tgt, cc=cc)

        if op in (0x80, 0x81, 0x82, 0x83):
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            name = _ARITH[reg & 7]
            if op in (0x80, 0x82):
                width = 8
                v = cur.imm(1)
            elif op == 0x81:
                width = osize
                v = mask(cur.imm(2 if osize == 16 else 4, signed=True), osize)
            else:
                width = osize
                v = mask(cur.imm(1, signed=True), osize)
            if rmreg is not None:
                return fin(name, [f"${_hex(v)}", f"%{self._reg(rmreg, width, rexarg)}"],
                           imm=v, dest=fam(rmreg), opsz=width, consts=[(0, v)])
            ins = fin(name, [f"${_hex(v)}", self._fmt_mem(mem)], imm=v, mem=mem,
                      access="load" if name == "cmp" else "rmw", opsz=width,
                      consts=[(0, v)] + _mem_consts(mem))
            return ins

        if op in (0x84, 0x85):
            width = 8 if op == 0x84 else osize
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            if rmreg is not None:
                return fin("test", [f"%{self._reg(reg, width, rexarg)}",
                                    f"%{self._reg(rmreg, width, rexarg)}"],
                           src=fam(reg), dest=fam(rmreg), opsz=width)
            ins = fin("test", [f"%{self._reg(reg, width, rexarg)}", self._fmt_mem(mem)],
                      mem=mem, access="load", opsz=width, consts=_mem_consts(mem))
            return ins
        if op in (0x86, 0x87):
            width = 8 if op == 0x86 else osize
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            if rmreg is not None:
                return fin("xchg", [f"%{self._reg(reg, width, rexarg)}",
                                    f"%{self._reg(rmreg, width, rexarg)}"], opsz=width)
            return fin("xchg", [f"%{self._reg(reg, width, rexarg)}",
                                self._fmt_mem(mem)], mem=mem, access="rmw",
                       opsz=width)

        if op in (0x88, 0x89, 0x8A, 0x8B):
            width = 8 if op in (0x88, 0x8A) else osize
            to_rm = op in (0x88, 0x89)
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            regname = self._reg(reg, width, rexarg)
            if rmreg is not None:
                rmname = self._reg(rmreg, width, rexarg)
                if to_rm:
                    return fin("mov", [f"%{regname}", f"%{rmname}"],
                               src=fam(reg), dest=fam(rmreg), opsz=width)
                return fin("mov", [f"%{rmname}", f"%{regname}"],
                           src=fam(rmreg), dest=fam(reg), opsz=width)
            consts = _mem_consts(mem)
            if to_rm:
                ins = fin("mov", [f"%{regname}", self._fmt_mem(mem)], mem=mem,
                          access="store", src=fam(reg), opsz=width, consts=consts)
            else:
                ins = fin("mov", [self._fmt_mem(mem), f"%{regname}"], mem=mem,
                          access="load", dest=fam(reg), opsz=width, consts=consts)
            return ins

        if op == 0x8D:
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            if mem is None:
                raise _Reject(op)
            dst = self._reg(reg, osize, rexarg)
            imm = None
            consts = []
            if mem.base is None and mem.index is None:
                imm = mem.disp
                consts = [(0, mem.disp)]
            return fin("lea", [self._fmt_mem(mem), f"%{dst}"], mem=mem,
                       access="addr", dest=fam(reg), imm=imm, consts=consts)

        if op == 0x8F:
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            if reg & 7:  # pop r/m is defined only for modrm.reg == 0
                raise _Reject(data[offset])
            if rmreg is not None:
                return fin("pop", [f"%{self._reg(rmreg, osize, rexarg)}"],
                           dest=fam(rmreg))
            return fin("pop", [self._fmt_mem(mem)], mem=mem, access="store")

        if op == 0x90:
            if rep == 0xF3:
                return fin("pause", [])
            if osize_override:
                return fin("xchg", ["%ax", "%ax"], opsz=16)
            return fin("nop", [])
        if 0x91 <= op <= 0x97:
            r = (rex & 1) << 3 | (op & 7)
            acc = self._reg(0, osize, rexarg)
            return fin("xchg", [f"%{self._reg(r, osize, rexarg)}", f"%{acc}"])

        if op == 0x98:
            return fin("cltq" if osize == 64 else ("cbtw" if osize == 16 else "cwtl"), [])
        if op == 0x99:
            return fin("cqto" if osize == 64 else ("cwtd" if osize == 16 else "cltd"), [])
        if op == 0x9A:  # x86 far call, ptr16:16 or ptr16:32 immediate
            off = cur.imm(2) if osize == 16 else cur.imm(4)
            sel = cur.imm(2)
            return fin("lcall", [f"$0x{sel:x}", f"$0x{off:x}"],
                       flow=FLOW_CALL, target=off)
        if op == 0x9B:
            return fin("fwait", [])
        if op == 0x9C:
            return fin("pushfq" if mode == "x64" else "pushf", [])
        if op == 0x9D:
            return fin("popfq" if mode == "x64" else "popf", [])
        if op in (0x9E, 0x9F):
            return fin("sahf" if op == 0x9E else "lahf", [])

        if 0xA0 <= op <= 0xA3:
            n = asize // 8
            addr = cur.imm(n)
            width = 8 if op in (0xA0, 0xA2) else osize
            acc = self._reg(0, width, rexarg)
            mem = MemExpr(None, None, 1, addr, seg)
            if op in (0xA0, 0xA1):
                return fin("mov", [self._fmt_mem(mem), f"%{acc}"], mem=mem,
                           access="load", dest=fam(0), opsz=width,
                           consts=[(0, addr)])
            return fin("mov", [f"%{acc}", self._fmt_mem(mem)], mem=mem,
                       access="store", src=fam(0), opsz=width, consts=[(1, addr)])

        if op in (0xA4, 0xA5, 0xA6, 0xA7, 0xAA, 0xAB, 0xAC, 0xAD, 0xAE, 0xAF):
            names = {0xA4: "movsb", 0xA5: "movs", 0xA6: "cmpsb", 0xA7: "cmps",
                     0xAA: "stosb", 0xAB: "stos", 0xAC: "lodsb", 0xAD: "lods",
                     0xAE: "scasb", 0xAF: "scas"}
            pre = "rep " if rep else ""
            return fin(names[op], [], text=pre + names[op])

        if op == 0xA8:
            v = cur.imm(1)
            return fin("test", [f"${_hex(v)}", "%al"], imm=v, opsz=8, consts=[(0, v)])
        if op == 0xA9:
            v = mask(cur.imm(2 if osize == 16 else 4, signed=True), osize)
            return fin("test", [f"${_hex(v)}", f"%{self._reg(0, osize, rexarg)}"],
                       imm=v, consts=[(0, v)])

        if 0xB0 <= op <= 0xB7:
            r = (rex & 1) << 3 | (op & 7)
            v = cur.imm(1)
            return fin("mov", [f"${_hex(v)}", f"%{self._reg(r, 8, rexarg)}"],
                       imm=v, dest=fam(r), opsz=8, consts=[(0, v)])
        if 0xB8 <= op <= 0xBF:
            r = (rex & 1) << 3 | (op & 7)
            if osize == 64:
                v = cur.imm(8)
                return fin("movabs", [f"${_hex(v)}", f"%{self._reg(r, 64, rexarg)}"],
                           imm=v, dest=fam(r), opsz=64, consts=[(0, v)])
            n = 2 if osize == 16 else 4
            v = cur.imm(n)
            return fin("mov", [f"${_hex(v)}", f"%{self._reg(r, osize, rexarg)}"],
                       imm=v, dest=fam(r), consts=[(0, v)])

        if op in (0xC0, 0xC1, 0xD0, 0xD1, 0xD2, 0xD3):
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            name = _SHIFT[reg & 7]
            width = 8 if op in (0xC0, 0xD0, 0xD2) else osize
            if op in (0xC0, 0xC1):
                v = cur.imm(1)
                amt = f"${_hex(v)}"
                imm = v
            elif op in (0xD0, 0xD1):
                amt, imm = "$1", 1
            else:
                amt, imm = "%cl", None
            tgt = (f"%{self._reg(rmreg, width, rexarg)}" if rmreg is not None
                   else self._fmt_mem(mem))
            return fin(name, [amt, tgt], imm=imm, mem=mem,
                       access="rmw" if mem else "none",
                       dest=fam(rmreg) if rmreg is not None else None, opsz=width)

        if op == 0xC2:
            v = cur.imm(2)
            return fin("ret", [f"${_hex(v)}"], flow=FLOW_RET, imm=v)
        if op == 0xC3:
            if rep == 0xF3:
                return fin("ret", [], flow=FLOW_RET, text="repz retq")
            return fin("ret", [], flow=FLOW_RET)

        if op in (0xC6, 0xC7):
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            if (reg & 7) != 0:
                raise _Reject(op)
            if op == 0xC6:
                width = 8
                v = cur.imm(1)
            else:
                width = osize
                v = mask(cur.imm(2 if osize == 16 else 4, signed=True), osize)
            if rmreg is not None:
                return fin("mov", [f"${_hex(v)}", f"%{self._reg(rmreg, width, rexarg)}"],
                           imm=v, dest=fam(rmreg), opsz=width, consts=[(0, v)])
            ins = fin("mov", [f"${_hex(v)}", self._fmt_mem(mem)], imm=v, mem=mem,
                      access="store", opsz=width,
                      consts=[(0, v)] + _mem_consts(mem))
            return ins

        if op == 0xC8:
            a = cur.imm(2)
            b2 = cur.imm(1)
            return fin("enter", [f"${_hex(a)}", f"${_hex(b2)}"])
        if op == 0xC9:
            return fin("leave", [])
        if op in (0xCA, 0xCB):
            if op == 0xCA:
                cur.imm(2)
            return fin("retf", [], flow=FLOW_RET)
        if op == 0xCC:
            return fin("int3", [], flow=FLOW_HALT)
        if op == 0xCD:
            v = cur.imm(1)
            return fin("int", [f"${_hex(v)}"], imm=v)
        if op == 0xCE:
            return fin("into", [])
        if op == 0xCF:
            return fin("iret", [], flow=FLOW_RET)

        if 0xD8 <= op <= 0xDF:
            return self._decode_x87(cur, op, mode, rex, asize, seg, fin)

        if 0xE0 <= op <= 0xE3:
            d = cur.imm(1, signed=True)
            tgt = vaddr + cur.length() + d
            name = ("loopne", "loope", "loop", "jrcxz" if mode == "x64" else "jecxz")[op - 0xE0]
            return fin(name, [f"{tgt:x}"], flow=FLOW_COND, target=tgt)
        if op in (0xE4, 0xE5, 0xE6, 0xE7):
            cur.imm(1)
            return fin("in" if op < 0xE6 else "out", [])
        if 0xEC <= op <= 0xEF:
            return fin("in" if op < 0xEE else "out", [])

        if op == 0xE8:
            d = cur.imm(2 if osize == 16 else 4, signed=True)
            tgt = vaddr + cur.length() + d
            return fin("call", [f"{tgt:x}"], flow=FLOW_CALL, target=tgt)
        if op == 0xE9:
            d = cur.imm(2 if osize == 16 else 4, signed=True)
            tgt = vaddr + cur.length() + d
            return fin("jmp", [f"{tgt:x}"], flow=FLOW_JUMP, target=tgt)
        if op == 0xEB:
            d = cur.imm(1, signed=True)
            tgt = vaddr + cur.length() + d
            return fin("jmp", [f"{tgt:x}"], flow=FLOW_JUMP, target=tgt)

        if op == 0xF1:
            return fin("int1", [], flow=FLOW_HALT)
        if op == 0xF4:
            return fin("hlt", [], flow=FLOW_HALT)
        if op == 0xF5:
            return fin("cmc", [])

        if op in (0xF6, 0xF7):
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            sub = reg & 7
            width = 8 if op == 0xF6 else osize
            names = ("test", "test", "not", "neg", "mul", "imul", "div", "idiv")
            name = names[sub]
            ops = []
            imm = None
            consts = list(_mem_consts(mem) if mem else [])
            if sub in (0, 1):
                if op == 0xF6:
                    imm = cur.imm(1)
                else:
                    imm = mask(cur.imm(2 if osize == 16 else 4, signed=True), osize)
                ops.append(f"${_hex(imm)}")
                consts.insert(0, (0, imm))
            ops.append(f"%{self._reg(rmreg, width, rexarg)}" if rmreg is not None
                       else self._fmt_mem(mem))
            ins = fin(name, ops, imm=imm, mem=mem,
                      access=("load" if sub in (0, 1) else "rmw") if mem else "none",
                      dest=fam(rmreg) if rmreg is not None and sub > 1 else None,
                      opsz=width, consts=consts)
            return ins

        if op in (0xF8, 0xF9, 0xFA, 0xFB, 0xFC, 0xFD):
            return fin(("clc", "stc", "cli", "sti", "cld", "std")[op - 0xF8], [])

        if op == 0xFE:
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            if (reg & 7) > 1:
                raise _Reject(op)
            name = "inc" if (reg & 7) == 0 else "dec"
            return fin(name, [f"%{self._reg(rmreg, 8, rexarg)}" if rmreg is not None
                              else self._fmt_mem(mem)], mem=mem,
                       access="rmw" if mem else "none", opsz=8)

        if op == 0xFF:
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            sub = reg & 7
            if sub in (0, 1):
                name = "inc" if sub == 0 else "dec"
                tgt = (f"%{self._reg(rmreg, osize, rexarg)}" if rmreg is not None
                       else self._fmt_mem(mem))
                return fin(name, [tgt], mem=mem, access="rmw" if mem else "none",
                           dest=fam(rmreg) if rmreg is not None else None)
            if sub in (2, 3):
                if rmreg is not None:
                    return fin("call", [f"*%{self._reg(rmreg, 64 if mode == 'x64' else 32, rexarg)}"],
                               flow=FLOW_CALL_INDIRECT, src=fam(rmreg))
                ins = fin("call", [f"*{self._fmt_mem(mem)}"],
                          flow=FLOW_CALL_INDIRECT, mem=mem, access="load",
                          consts=_mem_consts(mem))
                return ins
            if sub in (4, 5):
                if rmreg is not None:
                    return fin("jmp", [f"*%{self._reg(rmreg, 64 if mode == 'x64' else 32, rexarg)}"],
                               flow=FLOW_JUMP_INDIRECT, src=fam(rmreg))
                ins = fin("jmp", [f"*{self._fmt_mem(mem)}"],
                          flow=FLOW_JUMP_INDIRECT, mem=mem, access="load",
                          consts=_mem_consts(mem))
                return ins
            if sub == 6:
                if rmreg is not None:
                    return fin("push", [f"%{self._reg(rmreg, 64 if mode == 'x64' else 32, rexarg)}"],
                               src=fam(rmreg))
                ins = fin("push", [self._fmt_mem(mem)], mem=mem, access="load",
                          consts=_mem_consts(mem))
                return ins
            raise _Reject(op)

        raise _Reject(op)

    # -- two-byte map -------------------------------------------------

    def _decode_0f(self, cur, data, offset, vaddr, mode, rex, have_rex,
                   osize, asize, osize_override, rep, seg, fin, fam):
        rexarg = rex if have_rex else None
        op2 = cur.u8()

        if op2 == 0x05:
            return fin("syscall", [])
        if op2 == 0x0B:
            return fin("ud2", [], flow=FLOW_HALT)
        if op2 == 0x1E and rep == 0xF3:
            m = cur.u8()
            if m == 0xFA:
                return fin("endbr64", [])
            if m == 0xFB:
                return fin("endbr32", [])
            raise _Reject(m)
        if op2 == 0x1F:
            _, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            name = "nopw" if osize_override else "nopl"
            tgt = self._fmt_mem(mem) if mem is not None else \
                f"%{self._reg(rmreg, osize, rexarg)}"
            return fin("nop", [tgt], mem=mem, access="none", text=f"{name} {tgt}")

        if op2 == 0x31:
            return fin("rdtsc", [])
        if op2 == 0xA2:
            return fin("cpuid", [])

        sse_scalar = {0x10: "mov", 0x11: "mov", 0x2A: "cvtsi2s", 0x2C: "cvtts2si",
                      0x2D: "cvts2si", 0x51: "sqrts", 0x58: "adds", 0x59: "muls",
                      0x5C: "subs", 0x5E: "divs", 0x5A: "cvts2s"}
        if op2 in sse_scalar or op2 in (0x28, 0x29, 0x54, 0x57, 0x6E, 0x7E, 0xD6,
                                        0x2E, 0x2F, 0xEF):
            return self._decode_sse(cur, op2, mode, rex, rexarg, asize,
                                    osize_override, rep, seg, fin, fam)

        if 0x40 <= op2 <= 0x4F:
            cc = _CC[op2 & 0xF]
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            dst = self._reg(reg, osize, rexarg)
            srctxt = (f"%{self._reg(rmreg, osize, rexarg)}" if rmreg is not None
                      else self._fmt_mem(mem))
            ins = fin("cmov" + cc, [srctxt, f"%{dst}"], dest=fam(reg),
                      src=fam(rmreg) if rmreg is not None else None,
                      mem=mem, access="load" if mem else "none", cc=cc,
                      consts=_mem_consts(mem) if mem else ())
            return ins

        if 0x80 <= op2 <= 0x8F:
            d = cur.imm(2 if osize == 16 else 4, signed=True)
            tgt = vaddr + cur.length() + d
            cc = _CC[op2 & 0xF]
            return fin("j" + cc, [f"{tgt:x}"], flow=FLOW_COND, target=tgt, cc=cc)

        if 0x90 <= op2 <= 0x9F:
            cc = _CC[op2 & 0xF]
            _, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            tgt = (f"%{self._reg(rmreg, 8, rexarg)}" if rmreg is not None
                   else self._fmt_mem(mem))
            return fin("set" + cc, [tgt], mem=mem,
                       access="store" if mem else "none",
                       dest=fam(rmreg) if rmreg is not None else None, cc=cc,
                       opsz=8)

        if op2 in (0xA3, 0xAB, 0xB3, 0xBB):  # bt/bts/btr/btc
            names = {0xA3: "bt", 0xAB: "bts", 0xB3: "btr", 0xBB: "btc"}
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            tgt = (f"%{self._reg(rmreg, osize, rexarg)}" if rmreg is not None
                   else self._fmt_mem(mem))
            return fin(names[op2], [f"%{self._reg(reg, osize, rexarg)}", tgt],
                       mem=mem, access="rmw" if mem else "none")
        if op2 == 0xBA:  # bt group, imm
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            v = cur.imm(1)
            names = ("", "", "", "", "bt", "bts", "btr", "btc")
            name = names[reg & 7]
            if not name:
                raise _Reject(op2)
            tgt = (f"%{self._reg(rmreg, osize, rexarg)}" if rmreg is not None
                   else self._fmt_mem(mem))
            return fin(name, [f"${_hex(v)}", tgt], imm=v, mem=mem,
                       access="rmw" if mem else "none")

        if op2 == 0xAF:
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            dst = self._reg(reg, osize, rexarg)
            srctxt = (f"%{self._reg(rmreg, osize, rexarg)}" if rmreg is not None
                      else self._fmt_mem(mem))
            ins = fin("imul", [srctxt, f"%{dst}"], dest=fam(reg),
                      src=fam(rmreg) if rmreg is not None else None,
                      mem=mem, access="load" if mem else "none",
                      consts=_mem_consts(mem) if mem else ())
            return ins

        if op2 in (0xB0, 0xB1):  # cmpxchg
            width = 8 if op2 == 0xB0 else osize
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            tgt = (f"%{self._reg(rmreg, width, rexarg)}" if rmreg is not None
                   else self._fmt_mem(mem))
            return fin("cmpxchg", [f"%{self._reg(reg, width, rexarg)}", tgt],
                       mem=mem, access="rmw" if mem else "none", opsz=width)

        if op2 in (0xB6, 0xB7, 0xBE, 0xBF):
            signed = op2 >= 0xBE
            srcw = 8 if op2 in (0xB6, 0xBE) else 16
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            dst = self._reg(reg, osize, rexarg)
            suffix = {8: "b", 16: "w"}[srcw] + {16: "w", 32: "l", 64: "q"}[osize]
            name = ("movs" if signed else "movz") + suffix
            srctxt = (f"%{self._reg(rmreg, srcw, rexarg)}" if rmreg is not None
                      else self._fmt_mem(mem))
            ins = fin(name, [srctxt, f"%{dst}"], dest=fam(reg),
                      src=fam(rmreg) if rmreg is not None else None,
                      mem=mem, access="load" if mem else "none",
                      consts=_mem_consts(mem) if mem else ())
            return ins

        if op2 in (0xC0, 0xC1):  # xadd
            width = 8 if op2 == 0xC0 else osize
            reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
            tgt = (f"%{self._reg(rmreg, width, rexarg)}" if rmreg is not None
                   else self._fmt_mem(mem))
            return fin("xadd", [f"%{self._reg(reg, width, rexarg)}", tgt],
                       mem=mem, access="rmw" if mem else "none", opsz=width)
        if 0xC8 <= op2 <= 0xCF:
            r = (rex & 1) << 3 | (op2 & 7)
            return fin("bswap", [f"%{self._reg(r, osize, rexarg)}"], dest=fam(r))

        raise _Reject(op2)

    def _decode_sse(self, cur, op2, mode, rex, rexarg, asize,
                    osize_override, rep, seg, fin, fam):
        if rep == 0xF3:
            sfx = "ss"
        elif rep == 0xF2:
            sfx = "sd"
        elif osize_override:
            sfx = "pd"
        else:
            sfx = "ps"
        reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
        xmm = f"%xmm{reg}"
        rmtxt = f"%xmm{rmreg}" if rmreg is not None else self._fmt_mem(mem)
        names = {0x10: "mov", 0x11: "mov", 0x28: "mova", 0x29: "mova",
                 0x2A: "cvtsi2s", 0x2C: "cvtts2si", 0x2D: "cvts2si",
                 0x2E: "ucomis", 0x2F: "comis", 0x51: "sqrt", 0x54: "and",
                 0x57: "xor", 0x58: "add", 0x59: "mul", 0x5A: "cvts2s",
                 0x5C: "sub", 0x5E: "div", 0x6E: "movd", 0x7E: "movd",
                 0xD6: "movq", 0xEF: "pxor"}
        base = names[op2]
        if base in ("movd", "movq", "pxor"):
            name = base
        elif base in ("mov", "mova") and sfx in ("ps", "pd"):
            name = ("movups" if base == "mov" else "movaps") if sfx == "ps" else \
                ("movupd" if base == "mov" else "movapd")
        elif base == "cvtsi2s":
            name = "cvtsi2" + sfx
        elif base in ("cvtts2si", "cvts2si"):
            name = ("cvtt" if base.startswith("cvtt") else "cvt") + sfx + "2si"
        elif base == "cvts2s":
            name = "cvt" + sfx + "2" + ("sd" if sfx == "ss" else "ss")
        else:
            name = base + sfx
        store = op2 in (0x11, 0x29) or (op2 == 0x7E and osize_override) or op2 == 0xD6
        if store:
            ops = [xmm, rmtxt]
            access = "store" if mem is not None else "none"
        else:
            ops = [rmtxt, xmm]
            access = "load" if mem is not None else "none"
        ins = fin(name, ops, mem=mem, access=access, fp=True,
                  consts=_mem_consts(mem) if mem else ())
        return ins

    def _decode_x87(self, cur, op, mode, rex, asize, seg, fin):
        reg, rmreg, mem = self._modrm(cur, mode, rex, asize, seg)
        sub = reg & 7
        if rmreg is not None:
            return fin("x87", [f"st{rmreg & 7}"], fp=True)
        width = {0xD8: 32, 0xD9: 32, 0xDA: 32, 0xDB: 32,
                 0xDC: 64, 0xDD: 64, 0xDE: 16, 0xDF: 16}[op]
        loads = {(0xD9, 0): "fld", (0xDD, 0): "fldl", (0xDB, 5): "fldt",
                 (0xD8, 0): "fadds", (0xDC, 0): "faddl",
                 (0xD8, 1): "fmuls", (0xDC, 1): "fmull"}
        stores = {(0xD9, 2): "fst", (0xD9, 3): "fstp", (0xDD, 2): "fstl",
                  (0xDD, 3): "fstpl"}
        name = loads.get((op, sub)) or stores.get((op, sub)) or "x87"
        access = "store" if (op, sub) in stores else "load"
        ins = fin(name, [self._fmt_mem(mem)], mem=mem, access=access, fp=True,
                  opsz=width, consts=_mem_consts(mem))
        return ins


def _mem_consts(mem: MemExpr | None) -> list[tuple[int, int]]:
    if mem is None or mem.base == "rip":
        return []
    if mem.base is None and mem.index is None:
        return [(0, mem.disp)]
    if mem.disp:
        return [(0, mem.disp)]
    return []


def rip_target(insn: Instruction) -> int | None:
    """Absolute address referenced by a rip-relative memory operand."""
    if insn.mem is not None and insn.mem.base == "rip":
        return insn.vaddr + insn.length + insn.mem.disp
    return None


_BACKEND: DecoderBackend = _TableDecoder()


def set_backend(backend: DecoderBackend) -> None:
    global _BACKEND
    _BACKEND = backend


def get_backend() -> DecoderBackend:
    return _BACKEND


def decode_bytes(data: bytes, offset: int, vaddr: int,
                 mode: str) -> Instruction | InvalidOpcode:
    if offset >= len(data):
        return InvalidOpcode(vaddr, 0)
    return _BACKEND.decode(data, offset, vaddr, mode)


def decode_at(image, vaddr: int) -> Instruction | InvalidOpcode:
    """Decode one instruction from a loaded image.

    Raises AddressError for an unmapped address; a mapped address that
    does not decode yields InvalidOpcode.
    """
    from .errors import AddressError
    sec = image.section_at(vaddr)
    if sec is None:
        raise AddressError(f"address {vaddr:#x} is not mapped")
    return decode_bytes(sec.data, vaddr - sec.vaddr, vaddr, image.mode)
