"""Recursive traversal disassembly and the gap heuristics layered on it.

Pure descent only decodes what control flow provably reaches from the
seeds, so coverage has holes wherever code is reached through pointers
the traversal cannot follow.  The gap pass closes those holes with three
escalating guesses: prologue pattern seeding, linear scanning of leftover
gaps, and treating code addresses found in data or instruction operands
as entries.  Each decoded instruction keeps a tag saying which route
added it, and guessed routes that end in a decode error are undone.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .decode import (FLOW_CALL, FLOW_CALL_INDIRECT, FLOW_COND, FLOW_HALT,
                     FLOW_JUMP, FLOW_JUMP_INDIRECT, FLOW_RET, Instruction,
                     decode_at)
from .funcid import match_prologues
from .image import BinaryImage

SEED_REACHABLE = "seed_reachable"
PROLOGUE_MATCH = "prologue_match"
GAP_SCAN = "gap_scan"
XREF_SEED = "xref_seed"


@dataclass(frozen=True)
class BasicBlock:
    start: int
    end: int  # exclusive
    successors: tuple[int, ...]


@dataclass
class DecodeFailure:
    vaddr: int
    reason: str  # bad_opcode | outside_code | mid_instruction


@dataclass
class DisasmResult:
    instructions: dict[int, Instruction] = field(default_factory=dict)
    blocks: list[BasicBlock] = field(default_factory=list)
    provenance: dict[int, str] = field(default_factory=dict)
    pending_indirect: list[int] = field(default_factory=list)
    decode_failures: list[DecodeFailure] = field(default_factory=list)
    # seed address -> tag, for the heuristic routes that create entries
    heuristic_seeds: dict[int, str] = field(default_factory=dict)

    def sorted_instructions(self) -> list[Instruction]:
        return [self.instructions[a] for a in sorted(self.instructions)]


class CfgHooks:
    """Answers the one flow question descent cannot settle alone."""

    def call_returns(self, target: int) -> bool:
        return True


_DEFAULT_HOOKS = CfgHooks()

_STOP = (FLOW_RET, FLOW_HALT)


def _descend(image: BinaryImage, result: DisasmResult, seeds, tag: str,
             hooks: CfgHooks) -> tuple[list[int], bool]:
    """Worklist traversal from the seeds.

    Returns the addresses added and whether the walk stayed clean: no
    bad opcode, no direct branch into non-code, no landing inside an
    already-decoded instruction.  Unclean walks are still applied; the
    caller decides whether to keep them.
    """
    added: list[int] = []
    clean = True
    work = deque(seeds)
    covered = _covered_spans(result)
    while work:
        pos = work.popleft()
        if pos in result.instructions:
            continue
        if not image.in_code(pos):
            result.decode_failures.append(DecodeFailure(pos, "outside_code"))
            clean = False
            continue
        if _inside_existing(covered, pos):
            result.decode_failures.append(DecodeFailure(pos, "mid_instruction"))
            clean = False
            continue
        insn = decode_at(image, pos)
        if not isinstance(insn, Instruction):
            result.decode_failures.append(DecodeFailure(pos, "bad_opcode"))
            clean = False
            continue
        result.instructions[pos] = insn
        result.provenance[pos] = tag
        added.append(pos)
        covered.append((pos, insn.end))

        flow = insn.flow
        if flow in _STOP:
            continue
        if flow == FLOW_JUMP:
            work.append(insn.branch_target)
        elif flow == FLOW_JUMP_INDIRECT:
            result.pending_indirect.append(pos)
        elif flow == FLOW_COND:
            work.append(insn.branch_target)
            work.append(insn.end)
        elif flow == FLOW_CALL:
            work.append(insn.branch_target)
            if hooks.call_returns(insn.branch_target):
                work.append(insn.end)
        elif flow == FLOW_CALL_INDIRECT:
            result.pending_indirect.append(pos)
            work.append(insn.end)
        else:
            work.append(insn.end)
    return added, clean


def _covered_spans(result: DisasmResult) -> list[tuple[int, int]]:
    return [(i.vaddr, i.end) for i in result.instructions.values()]


def _inside_existing(covered: list[tuple[int, int]], pos: int) -> bool:
    return any(lo < pos < hi for lo, hi in covered)


def recursive_descent(image: BinaryImage, seeds, cfg_hooks: CfgHooks | None = None,
                      config=None) -> DisasmResult:
    """Descend from the given seed addresses.

    Decode failures abandon their path and are recorded, never fatal.
    """
    result = DisasmResult()
    hooks = cfg_hooks if cfg_hooks is not None else _DEFAULT_HOOKS
    _descend(image, result, seeds, SEED_REACHABLE, hooks)
    rebuild_blocks(result)
    return result


def gap_regions(result: DisasmResult, image: BinaryImage) -> list[tuple[int, int]]:
    """Maximal executable (start, end) ranges holding no decoded bytes."""
    spans = sorted(_covered_spans(result))
    gaps: list[tuple[int, int]] = []
    for sec in image.code_sections():
        pos = sec.vaddr
        for lo, hi in spans:
            if hi <= pos or lo >= sec.end:
                continue
            if lo > pos:
                gaps.append((pos, lo))
            pos = max(pos, hi)
        if pos < sec.end:
            gaps.append((pos, sec.end))
    return sorted(gaps)


_TERMINATORS = (FLOW_COND, FLOW_JUMP, FLOW_JUMP_INDIRECT, FLOW_RET, FLOW_HALT)


def rebuild_blocks(result: DisasmResult) -> None:
    """Recompute basic blocks from the instruction map."""
    insns = result.sorted_instructions()
    starts = {i.vaddr for i in insns}
    leaders = set()
    prev = None
    for insn in insns:
        if prev is None or insn.vaddr != prev.end or prev.flow in _TERMINATORS:
            leaders.add(insn.vaddr)
        if insn.branch_target in starts:
            leaders.add(insn.branch_target)
        prev = insn
    blocks: list[BasicBlock] = []
    current: list[Instruction] = []
    for insn in insns:
        if current and insn.vaddr in leaders:
            blocks.append(_close_block(current, starts))
            current = []
        current.append(insn)
    if current:
        blocks.append(_close_block(current, starts))
    result.blocks = blocks


def _close_block(insns: list[Instruction], starts: set[int]) -> BasicBlock:
    last = insns[-1]
    succ: list[int] = []
    if last.flow == FLOW_COND:
        if last.branch_target in starts:
            succ.append(last.branch_target)
        if last.end in starts:
            succ.append(last.end)
    elif last.flow == FLOW_JUMP:
        if last.branch_target in starts:
            succ.append(last.branch_target)
    elif last.flow in (FLOW_RET, FLOW_HALT, FLOW_JUMP_INDIRECT):
        pass
    elif last.end in starts:
        succ.append(last.end)
    return BasicBlock(insns[0].vaddr, last.end, tuple(dict.fromkeys(succ)))


def _scan_gap(image: BinaryImage, result: DisasmResult, lo: int, hi: int) -> None:
    """Linear scan of one gap, committing whole blocks only.

    A decode error (or an instruction crossing the gap edge) throws away
    the block being built and resumes one byte past where it failed.
    """
    pending: list[Instruction] = []

    def commit():
        if not pending:
            return
        result.heuristic_seeds.setdefault(pending[0].vaddr, GAP_SCAN)
        for insn in pending:
            result.instructions[insn.vaddr] = insn
            result.provenance[insn.vaddr] = GAP_SCAN
        pending.clear()

    pos = lo
    while pos < hi:
        insn = decode_at(image, pos)
        if not isinstance(insn, Instruction) or insn.end > hi:
            result.decode_failures.append(DecodeFailure(pos, "bad_opcode"))
            pending.clear()
            pos += 1
            continue
        pending.append(insn)
        pos = insn.end
        if insn.flow in (FLOW_RET, FLOW_HALT, FLOW_JUMP, FLOW_JUMP_INDIRECT):
            commit()
    commit()


def _xref_targets(image: BinaryImage, result: DisasmResult, config) -> list[int]:
    """Code addresses mentioned by instruction operands or data words."""
    targets: set[int] = set()
    for insn in result.instructions.values():
        for value in insn.const_values():
            if image.in_code(value):
                targets.add(value)
    word = image.word_size
    aligned = getattr(config, "symbolize_alignment", "machine") != "none"
    stride = word if aligned else 1
    for sec in image.data_sections():
        buf = sec.data
        for off in range(0, len(buf) - word + 1, stride):
            value = int.from_bytes(buf[off:off + word], "little")
            if image.in_code(value):
                targets.add(value)
    return sorted(targets)


def apply_gap_heuristics(image: BinaryImage, result: DisasmResult, config,
                         cfg_hooks: CfgHooks | None = None) -> None:
    """Close coverage gaps with the enabled guesses, to a fixed point.

    Order within a round: prologue seeding, then gap scanning, then
    cross-reference seeding.  Cross-reference walks are transactional;
    a decode error rolls the whole walk back.  Rounds repeat until no
    gap shrinks.
    """
    hooks = cfg_hooks if cfg_hooks is not None else _DEFAULT_HOOKS
    tried_xref: set[int] = set()
    while True:
        gaps = gap_regions(result, image)
        if not gaps:
            break
        if config.recursive_prologue_match:
            for hit in match_prologues(image, gaps):
                if hit in result.instructions:
                    continue
                added, _ = _descend(image, result, [hit], PROLOGUE_MATCH, hooks)
                if added and added[0] == hit:
                    result.heuristic_seeds.setdefault(hit, PROLOGUE_MATCH)
        if config.recursive_gap_scan:
            for lo, hi in gap_regions(result, image):
                _scan_gap(image, result, lo, hi)
        if config.recursive_xref_seed:
            open_gaps = gap_regions(result, image)
            for target in _xref_targets(image, result, config):
                if target in tried_xref or target in result.instructions:
                    continue
                if not any(lo <= target < hi for lo, hi in open_gaps):
                    continue
                tried_xref.add(target)
                mark = len(result.pending_indirect)
                added, clean = _descend(image, result, [target], XREF_SEED,
                                        hooks)
                if clean:
                    result.heuristic_seeds.setdefault(target, XREF_SEED)
                else:
                    # undo the walk; the failure records stay as the
                    # explanation for why this gap is still open
                    for vaddr in added:
                        del result.instructions[vaddr]
                        del result.provenance[vaddr]
                    del result.pending_indirect[mark:]
                open_gaps = gap_regions(result, image)
        if gap_regions(result, image) == gaps:
            break
    rebuild_blocks(result)
