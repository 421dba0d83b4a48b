"""Function entry discovery.

Entries come from several detectors of very different reliability:
symbol tables, frame-record initial locations, startup-argument
tracking for main, call targets observed during disassembly, and
byte-pattern prologue scanning over undecoded gaps.  Each entry
remembers which detector produced it, and one address keeps only its
most trustworthy source.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ehframe
from .decode import (FLOW_CALL, FLOW_CALL_INDIRECT, FLOW_HALT, FLOW_JUMP,
                     FLOW_JUMP_INDIRECT, FLOW_RET, decode_bytes, Instruction)
from .image import BinaryImage

SOURCE_SYMBOL = "symbol"
SOURCE_EH_FRAME = "eh_frame"
SOURCE_MAIN_ARG = "main_arg"
SOURCE_MAIN_PATTERN = "main_pattern"
SOURCE_CALL_TARGET = "call_target"
SOURCE_TAIL_CALL = "tail_call_target"
SOURCE_PROLOGUE = "prologue"
SOURCE_SCAN = "scan_begin"

# Lower rank wins when detectors disagree about one address.
_RANK = {
    SOURCE_SYMBOL: 0,
    SOURCE_EH_FRAME: 1,
    SOURCE_MAIN_ARG: 2,
    SOURCE_MAIN_PATTERN: 2,
    SOURCE_CALL_TARGET: 3,
    SOURCE_TAIL_CALL: 4,
    SOURCE_PROLOGUE: 5,
    SOURCE_SCAN: 6,
}


@dataclass(frozen=True, order=True)
class FunctionEntry:
    vaddr: int
    source: str


_CHAIN_STOP = (FLOW_RET, FLOW_HALT, FLOW_JUMP, FLOW_JUMP_INDIRECT)


def _startup_call(image: BinaryImage, instructions: dict[int, Instruction]):
    """The call handing control to the runtime, plus what precedes it.

    Walks straight-line from the program entry: the first call of any
    kind is taken to be the startup-routine invocation.  Returns the
    instruction list up to and including that call, or None.
    """
    chain: list[Instruction] = []
    pos = image.entry_point
    for _ in range(64):
        insn = instructions.get(pos)
        if insn is None:
            return None
        chain.append(insn)
        if insn.flow in (FLOW_CALL, FLOW_CALL_INDIRECT):
            return chain
        if insn.flow in _CHAIN_STOP:
            return None
        pos = insn.end
    return None


def find_main(image: BinaryImage, result, method: str) -> int | None:
    """Address of main recovered from the startup call, or None.

    arg_propagation tracks the first-argument register (or the x86
    stack slot) backward from the call until a constant reaches it.
    byte_pattern only inspects the instruction directly before the call
    and requires a recognized immediate-load encoding.
    """
    if method == "none":
        return None
    if method not in ("arg_propagation", "byte_pattern"):
        raise ValueError(f"unknown main-discovery method: {method}")
    chain = _startup_call(image, result.instructions)
    if chain is None or len(chain) < 2:
        return None
    before = chain[:-1]
    if method == "byte_pattern":
        return _main_by_pattern(image.mode, before[-1])
    return _main_by_tracking(image.mode, before)


def _main_by_pattern(mode: str, insn: Instruction) -> int | None:
    raw = insn.raw
    if mode == "x64":
        if raw[:3] == b"\x48\xc7\xc7" or raw[:1] == b"\xbf":
            return insn.imm
        return None
    if raw[:1] == b"\x68":
        return insn.imm
    return None


def _main_by_tracking(mode: str, before: list[Instruction]) -> int | None:
    if mode == "x86":
        # first argument is the value pushed last
        for insn in reversed(before):
            if insn.mnemonic == "push":
                return insn.imm
        return None
    track = "rdi"
    for insn in reversed(before):
        if insn.dest_reg != track:
            continue
        if insn.imm is not None:
            return insn.imm
        if insn.src_reg is not None:
            track = insn.src_reg
            continue
        return None
    return None


def eh_frame_entries(image: BinaryImage) -> list[int]:
    """Initial locations of all frame records, empty without the section."""
    sec = next((s for s in image.sections if s.name == ".eh_frame"), None)
    if sec is None:
        return []
    return ehframe.fde_starts(sec.data, sec.vaddr, image.word_size)


# A frame-setting prologue as byte-level scanners see it: any push of a
# general register, then either a mov involving the frame and stack
# registers (in whichever order, hence the documented false hits on
# epilogue movs) or a stack adjustment.
_MOV_OPS = (0x89, 0x8B)
_MOV_MODRM = (0xE5, 0xEC)
_SUB_PAIRS = (b"\x83\xec", b"\x81\xec")


def _prologue_at(image: BinaryImage, vaddr: int) -> bool:
    sec = image.section_at(vaddr)
    if sec is None:
        return False
    buf = sec.data
    off = vaddr - sec.vaddr
    marker = b"\xf3\x0f\x1e\xfa" if image.mode == "x64" else b"\xf3\x0f\x1e\xfb"
    if buf[off:off + 4] == marker:
        off += 4
    if off >= len(buf) or not 0x50 <= buf[off] <= 0x57:
        return False
    follower = off + 1
    core = follower
    if image.mode == "x64" and buf[core:core + 1] == b"\x48":
        core += 1
    pair = buf[core:core + 2]
    if len(pair) < 2:
        return False
    if not ((pair[0] in _MOV_OPS and pair[1] in _MOV_MODRM)
            or bytes(pair) in _SUB_PAIRS):
        return False
    second = decode_bytes(buf, follower, sec.vaddr + follower, image.mode)
    return isinstance(second, Instruction)


def match_prologues(image: BinaryImage, gaps) -> list[int]:
    """Addresses in the given (start, end) gaps where a prologue matches."""
    hits = []
    for lo, hi in gaps:
        for vaddr in range(lo, hi):
            if _prologue_at(image, vaddr):
                hits.append(vaddr)
    return hits


def collect_entries(image: BinaryImage, result, cfg, config) -> list[FunctionEntry]:
    """Merged function entries from every enabled detector.

    `result` is the disassembly outcome (instructions plus the seed
    provenance bookkeeping), `cfg` carries control-flow findings
    (tail_call_targets, indirect_call_targets) and may be None.  Every
    returned address is a decoded instruction start; the strongest
    source wins per address.
    """
    best: dict[int, str] = {}

    def offer(vaddr, source):
        if vaddr is None or vaddr not in result.instructions:
            return
        cur = best.get(vaddr)
        if cur is None or _RANK[source] < _RANK[cur]:
            best[vaddr] = source

    if config.funcid_symbol_entries:
        for sym in image.function_symbols():
            offer(sym.vaddr, SOURCE_SYMBOL)
    if config.funcid_eh_frame:
        for vaddr in eh_frame_entries(image):
            offer(vaddr, SOURCE_EH_FRAME)
    if config.funcid_main_method != "none":
        main = find_main(image, result, config.funcid_main_method)
        source = (SOURCE_MAIN_ARG if config.funcid_main_method == "arg_propagation"
                  else SOURCE_MAIN_PATTERN)
        offer(main, source)
    if config.funcid_call_target_entries:
        for insn in result.instructions.values():
            if insn.flow == FLOW_CALL:
                offer(insn.branch_target, SOURCE_CALL_TARGET)
    if config.funcid_indirect_call_entries and cfg is not None:
        for vaddr in getattr(cfg, "indirect_call_targets", ()):
            offer(vaddr, SOURCE_CALL_TARGET)
    if cfg is not None:
        for vaddr in getattr(cfg, "tail_call_targets", ()):
            offer(vaddr, SOURCE_TAIL_CALL)
    seeds = getattr(result, "heuristic_seeds", {})
    if config.recursive_prologue_match:
        for vaddr, tag in seeds.items():
            if tag == "prologue_match":
                offer(vaddr, SOURCE_PROLOGUE)
    if config.funcid_scan_begin_entries:
        for vaddr, tag in seeds.items():
            if tag == "gap_scan":
                offer(vaddr, SOURCE_SCAN)
    return sorted(FunctionEntry(v, s) for v, s in best.items())
