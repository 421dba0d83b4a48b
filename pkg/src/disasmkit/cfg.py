"""Control flow reconstruction on top of recovered instructions.

Edges and the call graph fall out of the blocks directly.  The rest is
resolution work, each piece shaped after a particular tool lineage:
jump tables by pattern match, by backward slice with interval bounds,
or by single-path tracking; indirect calls by constant propagation;
tail calls by per-tool rule sets; non-returning functions by several
propagation disciplines over the call graph.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

from .decode import (FLOW_CALL, FLOW_CALL_INDIRECT, FLOW_COND, FLOW_HALT,
                     FLOW_JUMP, FLOW_JUMP_INDIRECT, FLOW_RET)
from .image import BinaryImage
from .errors import AddressError

UNRESOLVED_NO_PATTERN = "no_pattern"
UNRESOLVED_NO_BOUND = "no_bound"
UNRESOLVED_BOUND_EXCEEDED = "bound_exceeds_threshold"
UNRESOLVED_SLICE_DEPTH = "slice_depth_exhausted"

JT_STRATEGIES = ("pattern_radare2", "slice_dyninst", "path_ghidra")


@dataclass
class CFG:
    blocks: list
    edges: list[tuple[int, int, str]]
    call_graph: list[tuple[int, int, int]]  # (caller entry, callee, site)
    call_sites: list[tuple[int, int]]       # (site, target), direct calls
    pending_jumps: list[int]
    pending_calls: list[int]
    indirect_call_targets: list[int] = field(default_factory=list)
    tail_call_targets: list[int] = field(default_factory=list)
    xref_targets: frozenset[int] = frozenset()


@dataclass(frozen=True)
class JumpTable:
    site: int
    base: int
    entry_width: int
    index_min: int
    index_bound: int
    targets: tuple[int, ...]
    encoding: str  # absolute | base_relative_signed


@dataclass(frozen=True)
class Unresolved:
    site: int
    reason: str


@dataclass(frozen=True)
class TailCall:
    site: int
    target: int
    rule_fired: str


@dataclass
class NonRetSet:
    members: set[int]
    seeds: set[str]


def build_edges(result) -> CFG:
    """Edges between blocks plus the parked indirect sites.

    Call fall-through never appears as an edge; direct call sites are
    recorded for the call graph instead.  Every emitted endpoint is a
    block start.
    """
    starts = {b.start for b in result.blocks}
    addrs = sorted(result.instructions)
    edges: list[tuple[int, int, str]] = []
    call_sites: list[tuple[int, int]] = []
    pending_jumps: list[int] = []
    pending_calls: list[int] = []
    for block in result.blocks:
        lo = bisect_left(addrs, block.start)
        hi = bisect_left(addrs, block.end)
        for pos in range(lo, hi):
            insn = result.instructions[addrs[pos]]
            if insn.flow == FLOW_CALL:
                call_sites.append((insn.vaddr, insn.branch_target))
            elif insn.flow == FLOW_CALL_INDIRECT:
                pending_calls.append(insn.vaddr)
        last = result.instructions[addrs[hi - 1]]
        flow = last.flow
        if flow == FLOW_COND:
            if last.branch_target in starts:
                edges.append((block.start, last.branch_target, "cond_taken"))
            if last.end in starts:
                edges.append((block.start, last.end, "cond_fallthrough"))
        elif flow == FLOW_JUMP:
            if last.branch_target in starts:
                edges.append((block.start, last.branch_target, "jump"))
        elif flow == FLOW_JUMP_INDIRECT:
            pending_jumps.append(last.vaddr)
        elif flow in (FLOW_CALL, FLOW_CALL_INDIRECT, FLOW_RET, FLOW_HALT):
            pass  # call fall-through is deliberately not an edge
        elif last.end in starts:
            edges.append((block.start, last.end, "fallthrough"))
    return CFG(list(result.blocks), edges, [], call_sites,
               pending_jumps, pending_calls)


def _owner(vaddr: int, ents: list[int]) -> int | None:
    i = bisect_right(ents, vaddr) - 1
    return ents[i] if i >= 0 else None


def _history(result, cfg: CFG, site: int,
             max_levels: int | None = None) -> tuple[list, bool]:
    """Instructions strictly before site in reverse order, following
    lone-predecessor block chains.  Second value reports whether the
    level cap cut the walk short."""
    addrs = sorted(result.instructions)
    blocks = sorted(cfg.blocks, key=lambda b: b.start)
    starts = [b.start for b in blocks]
    by_start = {b.start: b for b in blocks}
    preds: dict[int, set[int]] = {}
    for frm, to, _kind in cfg.edges:
        preds.setdefault(to, set()).add(frm)
    block = blocks[bisect_right(starts, site) - 1]
    pos = bisect_left(addrs, site) - 1
    out = []
    level = 0
    while True:
        while pos >= 0 and addrs[pos] >= block.start:
            out.append(result.instructions[addrs[pos]])
            pos -= 1
        sources = preds.get(block.start, set())
        if len(sources) != 1:
            return out, False
        if max_levels is not None and level >= max_levels:
            return out, True
        level += 1
        block = by_start[next(iter(sources))]
        pos = bisect_left(addrs, block.end) - 1


# Fall-through after a cmp/sub guard keeps the index inside a range;
# which side and with what slack depends on the branch condition.
_CC_HI = {"a": 0, "ae": -1, "g": 0, "ge": -1}
_CC_LO = {"be": 1, "b": 0, "le": 1, "l": 0}


def resolve_jump_table(image: BinaryImage, result, site: int, strategy: str,
                       config) -> JumpTable | Unresolved:
    """Work out base, bound and targets of one indirect jump."""
    insn = result.instructions.get(site)
    if insn is None or insn.flow != FLOW_JUMP_INDIRECT:
        raise ValueError(f"{site:#x} is not an indirect jump site")
    if strategy not in JT_STRATEGIES:
        raise ValueError(f"unknown jump table strategy {strategy!r}")
    cfg = build_edges(result)
    if strategy == "pattern_radare2":
        return _resolve_pattern(image, result, cfg, insn, config)
    return _resolve_slice(image, result, cfg, insn, strategy, config)


def _resolve_pattern(image, result, cfg, insn, config):
    """Memory-form jump plus a cmp/sub guard paired with an
    unsigned-above branch somewhere up the chain."""
    mem = insn.mem
    if mem is None or mem.index is None or mem.base is not None:
        return Unresolved(insn.vaddr, UNRESOLVED_NO_PATTERN)
    history, _ = _history(result, cfg, insn.vaddr)
    bound = None
    pending = None
    for prior in history:
        if prior.flow == FLOW_COND:
            pending = prior.cc
            continue
        if (prior.mnemonic in ("cmp", "sub") and prior.imm is not None
                and prior.dest_reg == mem.index and pending in ("a", "ae")):
            bound = prior.imm + _CC_HI[pending]
            break
        pending = None
    if bound is None:
        return Unresolved(insn.vaddr, UNRESOLVED_NO_BOUND)
    threshold = config.cfg_jt_bound_threshold
    if threshold and bound > threshold:
        return Unresolved(insn.vaddr, UNRESOLVED_BOUND_EXCEEDED)
    return _read_table(image, insn.vaddr, mem.disp, mem.scale, 0, bound,
                       "absolute")


def _resolve_slice(image, result, cfg, insn, strategy, config):
    site = insn.vaddr
    max_levels = config.cfg_slice_block_levels or None
    history, capped = _history(result, cfg, site, max_levels)

    # Find the memory read feeding the jump.  A register jump walks the
    # value chain backward; an add of another register on the way marks
    # base-relative entries.
    idx_pos = 0
    rel_base = None
    if insn.mem is not None:
        memread = insn
    else:
        tracked = insn.src_reg
        if tracked is None:
            return Unresolved(site, UNRESOLVED_NO_PATTERN)
        memread = None
        for pos, prior in enumerate(history):
            if prior.dest_reg != tracked:
                continue
            if prior.mem is not None and prior.mem.index is not None \
                    and prior.mem_access == "load":
                memread = prior
                idx_pos = pos + 1
                break
            if prior.mnemonic == "add" and prior.src_reg is not None \
                    and prior.imm is None and prior.mem is None:
                rel_base = prior.src_reg
                continue
            if prior.mnemonic == "mov" and prior.src_reg is not None \
                    and prior.mem is None:
                tracked = prior.src_reg
                continue
            return Unresolved(site, UNRESOLVED_NO_PATTERN)
        if memread is None:
            reason = UNRESOLVED_SLICE_DEPTH if capped \
                else UNRESOLVED_NO_PATTERN
            return Unresolved(site, reason)
    mem = memread.mem
    if mem.index is None:
        return Unresolved(site, UNRESOLVED_NO_PATTERN)

    if mem.base is None:
        base = mem.disp
    elif mem.base == "rip":
        base = memread.end + mem.disp
    else:
        base = _reg_as_const(result, history, idx_pos, mem.base,
                             thunk=strategy == "path_ghidra")
        if base is None:
            return Unresolved(site, UNRESOLVED_NO_PATTERN)

    lo, hi, width_cap, exhausted = _bound_index(history, idx_pos, mem.index,
                                                config, capped)
    if exhausted:
        return Unresolved(site, UNRESOLVED_SLICE_DEPTH)
    if hi is None:
        return Unresolved(site, UNRESOLVED_NO_BOUND)
    if strategy == "path_ghidra" and width_cap is not None:
        hi = min(hi, width_cap)
    if lo > hi:
        return Unresolved(site, UNRESOLVED_NO_BOUND)
    threshold = config.cfg_jt_bound_threshold
    if threshold and hi > threshold:
        return Unresolved(site, UNRESOLVED_BOUND_EXCEEDED)
    encoding = "base_relative_signed" if rel_base is not None else "absolute"
    return _read_table(image, site, base, mem.scale, lo, hi, encoding)


def _bound_index(history, idx_pos, index, config, capped):
    """Interval for the index register from guards up the chain.

    Width restrictions (movzbl and friends) never create a bound on
    their own; they are returned separately so the caller can decide
    whether to clamp with them.
    """
    tracked = index
    lo = 0
    hi = None
    width_cap = None
    pending = None
    assigns = 0
    limit = config.cfg_slice_assign_limit
    for prior in history[idx_pos:]:
        if limit and prior.dest_reg is not None:
            assigns += 1
            if assigns > limit:
                return lo, hi, width_cap, hi is None
        if prior.flow == FLOW_COND:
            pending = prior.cc
            continue
        cc, pending = pending, None
        if prior.mnemonic == "cmp" and prior.imm is not None \
                and prior.dest_reg == tracked and cc:
            if cc in _CC_HI:
                bound = prior.imm + _CC_HI[cc]
                hi = bound if hi is None else min(hi, bound)
            elif cc in _CC_LO:
                lo = max(lo, prior.imm + _CC_LO[cc])
            continue
        if prior.mnemonic == "and" and prior.imm is not None \
                and prior.dest_reg == tracked:
            hi = prior.imm if hi is None else min(hi, prior.imm)
            continue
        if prior.dest_reg == tracked:
            if prior.mnemonic in ("movzbl", "movzwl") \
                    and prior.src_reg is not None:
                width_cap = 0xFF if prior.mnemonic == "movzbl" else 0xFFFF
                tracked = prior.src_reg
                continue
            if prior.mnemonic == "mov" and prior.src_reg is not None \
                    and prior.mem is None and prior.imm is None:
                tracked = prior.src_reg
                continue
            break  # unmodeled redefinition; older guards do not apply
    if hi is None and capped:
        return lo, hi, width_cap, True
    return lo, hi, width_cap, False


def _reg_as_const(result, history, start, fam, *, thunk):
    """Constant a register holds at the anchor point, or None.

    With thunk on, the call-then-add idiom that materializes the
    program counter in a register is folded to its constant.
    """
    for pos in range(start, len(history)):
        prior = history[pos]
        if prior.dest_reg != fam:
            continue
        if prior.imm is not None and prior.mnemonic in ("mov", "lea"):
            return prior.imm
        if thunk and prior.mnemonic == "add" and prior.imm is not None:
            caller = history[pos + 1] if pos + 1 < len(history) else None
            if caller is not None and caller.flow == FLOW_CALL:
                body = result.instructions.get(caller.branch_target)
                if body is not None and body.mem is not None \
                        and body.mem.base in ("rsp", "esp") \
                        and body.mem.disp == 0 and body.dest_reg == fam \
                        and body.mem_access == "load":
                    return caller.end + prior.imm
            return None
        if prior.mnemonic == "mov" and prior.src_reg is not None \
                and prior.mem is None:
            fam = prior.src_reg
            continue
        return None
    return None


def _read_table(image, site, base, width, lo, hi, encoding):
    targets = []
    for i in range(lo, hi + 1):
        try:
            raw = image.bytes_at(base + i * width, width)
        except AddressError:
            return Unresolved(site, UNRESOLVED_NO_PATTERN)
        value = int.from_bytes(raw, "little")
        if encoding == "base_relative_signed":
            half = 1 << (width * 8 - 1)
            value = (value ^ half) - half + base
        targets.append(value)
    return JumpTable(site, base, width, lo, hi, tuple(targets), encoding)


def constant_prop_call_targets(image: BinaryImage, result, site: int,
                               scope: str) -> list[int]:
    """Constants reaching an indirect call (or reclassified jump)."""
    if scope not in ("block", "function"):
        raise ValueError(f"unknown propagation scope {scope!r}")
    insn = result.instructions.get(site)
    if insn is None or insn.flow not in (FLOW_CALL_INDIRECT,
                                         FLOW_JUMP_INDIRECT):
        raise ValueError(f"{site:#x} is not an indirect site")
    cfg = build_edges(result)
    max_levels = 0 if scope == "block" else None
    history, _ = _history(result, cfg, site, max_levels)
    if insn.mem is not None:
        value = _read_operand(image, result, history, 0, insn.mem,
                              image.word_size)
    else:
        if insn.src_reg is None:
            return []
        value = _reg_value(image, result, history, 0, insn.src_reg)
    return [] if value is None else [value]


def _reg_value(image, result, history, start, fam, depth=0):
    if depth > 4:
        return None
    for pos in range(start, len(history)):
        prior = history[pos]
        if prior.dest_reg != fam:
            continue
        if prior.imm is not None and prior.mnemonic in ("mov", "lea"):
            return prior.imm
        if prior.mnemonic == "mov" and prior.mem is not None \
                and prior.mem_access == "load":
            return _read_operand(image, result, history, pos + 1, prior.mem,
                                 prior.op_size // 8, depth + 1)
        if prior.mnemonic == "mov" and prior.src_reg is not None \
                and prior.mem is None:
            fam = prior.src_reg
            continue
        return None
    return None


def _read_operand(image, result, history, start, mem, width, depth=0):
    """Value of a memory operand when its address folds to a constant."""
    if mem.base == "rip":
        return None  # resolved form never reaches here from these flows
    addr = mem.disp
    if mem.base is not None:
        return None
    if mem.index is not None:
        idx = _reg_value(image, result, history, start, mem.index, depth + 1)
        if idx is None:
            return None
        addr += idx * mem.scale
    try:
        raw = image.bytes_at(addr, width)
    except AddressError:
        return None
    return int.from_bytes(raw, "little")


_TAILCALL_RULESETS = ("dyninst", "ghidra", "radare2", "angr")


def detect_tail_calls(result, cfg: CFG, entries, strategy: str,
                      config) -> list[TailCall]:
    """Jumps that leave their function, judged by per-tool rules."""
    if strategy not in _TAILCALL_RULESETS:
        raise ValueError(f"unknown tail call rule set {strategy!r}")
    ents = sorted(set(entries))
    addrs = sorted(result.instructions)
    out: list[TailCall] = []
    for block in sorted(cfg.blocks, key=lambda b: b.start):
        last = result.instructions[addrs[bisect_left(addrs, block.end) - 1]]
        if last.flow not in (FLOW_JUMP, FLOW_COND):
            continue
        target = last.branch_target
        if target is None or target not in result.instructions:
            continue
        got = _judge_tail_call(result, cfg, ents, strategy, config, last,
                               target)
        if got is not None:
            out.append(got)
    return out


def _judge_tail_call(result, cfg, ents, strategy, config, insn, target):
    site = insn.vaddr
    conditional = insn.flow == FLOW_COND
    if strategy == "radare2":
        distance = abs(target - site)
        if distance > config.cfg_tailcall_distance:
            return TailCall(site, target, "distance")
        return None
    if strategy == "ghidra":
        if conditional:
            return None
        lo, hi = min(site, target), max(site, target)
        if any(lo < e <= hi for e in ents):
            return TailCall(site, target, "entry_span")
        return None
    if strategy == "dyninst":
        if target in ents:
            return TailCall(site, target, "known_entry")
        if _stack_teardown_before(result, site) \
                and not _false_branch_reachable(result, cfg, ents, site,
                                                target):
            return TailCall(site, target, "teardown")
        return None
    # angr: one conjunction of four conditions
    if conditional:
        return None
    owner = _owner(site, ents)
    target_owner = _owner(target, ents)
    if target_owner is not None and target != target_owner \
            and target_owner != owner:
        return None  # middle of some other function
    if owner is not None and _stack_height(result, owner, site) != 0:
        return None
    for frm, to, kind in cfg.edges:
        if to == target and kind != "jump":
            return None
    return TailCall(site, target, "conjunction")


def _stack_teardown_before(result, site):
    addrs = sorted(result.instructions)
    i = bisect_left(addrs, site)
    prev = result.instructions[addrs[i - 1]] if i >= 1 else None
    if prev is None or prev.end != site:
        return False
    if prev.mnemonic == "add" and prev.dest_reg in ("rsp", "esp") \
            and prev.imm is not None:
        return True
    if prev.mnemonic == "pop" and i >= 2:
        before = result.instructions[addrs[i - 2]]
        return before.mnemonic == "leave" and before.end == prev.vaddr
    return False


def _false_branch_reachable(result, cfg, ents, site, target):
    """Whether target is reached from the function entry taking only
    fall-through paths (never a taken branch)."""
    entry = _owner(site, ents)
    if entry is None or entry not in {b.start for b in cfg.blocks}:
        return False
    follow = {}
    for frm, to, kind in cfg.edges:
        if kind in ("fallthrough", "cond_fallthrough"):
            follow.setdefault(frm, []).append(to)
    seen = set()
    work = [entry]
    while work:
        cur = work.pop()
        if cur in seen:
            continue
        seen.add(cur)
        work.extend(follow.get(cur, ()))
    return target in seen


_STACK_REGS = ("rsp", "esp")


def _stack_height(result, start, stop):
    """Net stack movement from start to just before stop, reading the
    instructions in address order as one straight line."""
    height = 0
    addrs = sorted(result.instructions)
    for pos in range(bisect_left(addrs, start), bisect_left(addrs, stop)):
        insn = result.instructions[addrs[pos]]
        unit = insn.op_size // 8
        if insn.mnemonic == "push":
            height -= unit
        elif insn.mnemonic == "pop":
            height += unit
        elif insn.mnemonic == "sub" and insn.dest_reg in _STACK_REGS \
                and insn.imm is not None:
            height -= insn.imm
        elif insn.mnemonic == "add" and insn.dest_reg in _STACK_REGS \
                and insn.imm is not None:
            height += insn.imm
        elif insn.mnemonic == "leave":
            height = 0
    return height


_NONRET_MODES = ("assume_fallthrough", "worklist_propagate", "depth_first",
                 "all_paths", "fallthrough_evidence")


def detect_nonreturning(image: BinaryImage, result, cfg: CFG, entries,
                        strategy: str, seeds) -> NonRetSet:
    """Functions that never return to their caller.

    Strategies differ in how a callee of unknown status is treated and
    in what order statuses are settled; the two propagating variants
    are meant to agree on every input.
    """
    if strategy not in _NONRET_MODES:
        raise ValueError(f"unknown non-return strategy {strategy!r}")
    seed_names = set(seeds)
    members: set[int] = set()
    for name in seed_names:
        sym = image.symbol_named(name)
        if sym is not None:
            members.add(sym.vaddr)
    ents = sorted(set(entries) | members)
    if strategy == "fallthrough_evidence":
        # two fixed rounds instead of propagation to a fixed point
        for _ in range(2):
            members |= _fallthrough_votes(result, cfg, ents)
    elif strategy == "all_paths":
        members = _all_paths_fixpoint(result, ents, members)
    else:
        funcs = _function_facts(result, ents)
        members = _scan_no_ret(funcs, members, strategy)
    return NonRetSet(members, seed_names)


def _function_facts(result, ents):
    """Per function: whether any instruction decoded there, whether a
    ret did, and where its cross-function jumps go."""
    facts = {e: {"seen": False, "ret": False, "tails": []} for e in ents}
    for addr in sorted(result.instructions):
        insn = result.instructions[addr]
        owner = _owner(addr, ents)
        if owner is None:
            continue
        facts[owner]["seen"] = True
        if insn.flow == FLOW_RET:
            facts[owner]["ret"] = True
        elif insn.flow in (FLOW_JUMP, FLOW_COND):
            target = insn.branch_target
            if target in facts and target != owner:
                facts[owner]["tails"].append(target)
    return facts


def _scan_no_ret(funcs, seed_members, mode):
    """No decoded ret and no tail call to something that returns.

    A function no decoding reached proves nothing and stays returning
    (unless seeded)."""
    def settled(entry, status):
        fact = funcs[entry]
        if not fact["seen"] or fact["ret"]:
            return False
        return all(status.get(t, False) for t in fact["tails"])

    status = {e: True for e in seed_members if e in funcs}
    order = sorted(funcs)
    if mode == "assume_fallthrough":
        for entry in order:
            if entry not in status:
                status[entry] = settled(entry, status)
    elif mode == "worklist_propagate":
        for entry in order:
            status.setdefault(entry, False)
        work = list(order)
        while work:
            entry = work.pop(0)
            if entry in seed_members:
                continue
            fresh = settled(entry, status)
            if fresh != status[entry]:
                status[entry] = fresh
                work.extend(e for e in order
                            if entry in funcs[e]["tails"])
    else:  # depth_first
        visiting: set[int] = set()

        def resolve(entry):
            if entry in status:
                return status[entry]
            if entry in visiting:
                return False  # cycles count as returning
            visiting.add(entry)
            fact = funcs[entry]
            verdict = fact["seen"] and not fact["ret"] and \
                all(resolve(t) for t in fact["tails"])
            visiting.discard(entry)
            status[entry] = verdict
            return verdict

        for entry in order:
            resolve(entry)
    members = set(seed_members)
    members.update(e for e, ok in status.items() if ok)
    return members


def _all_paths_fixpoint(result, ents, seed_members):
    """Every execution path ends at a call to a known non-returning
    function; recomputed until no function changes status."""
    members = set(seed_members)
    while True:
        grew = False
        for entry in ents:
            if entry in members:
                continue
            if _every_path_nonret(result, ents, entry, members):
                members.add(entry)
                grew = True
        if not grew:
            return members


def _every_path_nonret(result, ents, entry, members):
    insns = result.instructions
    if entry not in insns:
        return False

    def walk(addr, seen):
        if addr in seen:
            return True  # a loop never hands control back by itself
        insn = insns.get(addr)
        if insn is None or _owner(insn.vaddr, ents) != entry:
            return False  # ran out of decoded ground; cannot prove
        seen = seen | {addr}
        flow = insn.flow
        if flow in (FLOW_RET, FLOW_HALT, FLOW_JUMP_INDIRECT,
                    FLOW_CALL_INDIRECT):
            return False
        if flow == FLOW_CALL:
            if insn.branch_target in members:
                return True
            return walk(insn.end, seen)
        if flow == FLOW_JUMP:
            target = insn.branch_target
            if _owner(target, ents) != entry:
                return target in members
            return walk(target, seen)
        if flow == FLOW_COND:
            target = insn.branch_target
            if _owner(target, ents) != entry:
                taken = target in members
            else:
                taken = walk(target, seen)
            return taken and walk(insn.end, seen)
        return walk(insn.end, seen)

    return walk(entry, frozenset())


def _fallthrough_votes(result, cfg: CFG, ents):
    """Callees whose call sites show repeated broken fall-through."""
    votes: dict[int, int] = {}
    for site, target in cfg.call_sites:
        insn = result.instructions[site]
        after = insn.end
        unsafe = False
        if after not in result.instructions:
            unsafe = True
        elif _owner(after, ents) != _owner(site, ents):
            unsafe = True
        elif after in cfg.xref_targets:
            unsafe = True
        if unsafe:
            votes[target] = votes.get(target, 0) + 1
    return {target for target, n in votes.items() if n >= 3}


def finalize_cfg(result, tables, tailcalls, nonret,
                 entries=()) -> CFG:
    """Stitch resolved targets into the graph and close it out."""
    cfg = build_edges(result)
    starts = {b.start for b in cfg.blocks}
    blocks = sorted(cfg.blocks, key=lambda b: b.start)
    start_list = [b.start for b in blocks]

    def block_of(addr):
        return blocks[bisect_right(start_list, addr) - 1].start

    seen = set(cfg.edges)
    for table in tables:
        if isinstance(table, Unresolved):
            continue
        frm = block_of(table.site)
        for target in table.targets:
            edge = (frm, target, "jump_table")
            if target in starts and edge not in seen:
                seen.add(edge)
                cfg.edges.append(edge)
        if table.site in cfg.pending_jumps:
            cfg.pending_jumps.remove(table.site)

    ents = sorted(set(entries))
    members = nonret.members if nonret is not None else set()
    cfg.edges = [
        (frm, to, kind) for frm, to, kind in cfg.edges
        if not (kind == "fallthrough"
                and _ends_in_call_to(result, frm, blocks, start_list,
                                     members))
    ]

    def caller_of(site):
        owner = _owner(site, ents)
        return owner if owner is not None else block_of(site)

    call_graph = [(caller_of(site), target, site)
                  for site, target in cfg.call_sites]
    for tc in tailcalls:
        call_graph.append((caller_of(tc.site), tc.target, tc.site))
    cfg.call_graph = sorted(set(call_graph))
    cfg.tail_call_targets = sorted({tc.target for tc in tailcalls})
    return cfg


def _ends_in_call_to(result, block_start, blocks, start_list, members):
    if not members:
        return False
    block = blocks[bisect_right(start_list, block_start) - 1]
    addrs = sorted(result.instructions)
    last = result.instructions[addrs[bisect_left(addrs, block.end) - 1]]
    return last.flow == FLOW_CALL and last.branch_target in members
