"""From a loaded image and a flag set to a comparable record set.

The linear path sweeps the code sections under the configured error
policy.  The traversal path loops: descend, close gaps, resolve
indirect flow, identify functions, settle which callees never return.
Discovering a non-returning callee invalidates fall-through bytes the
previous descent decoded, so the loop restarts disassembly with the
larger callee set until nothing changes.  Everything the run learned
is flattened into one record set for scoring or emission.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import cfg as cflow
from . import funcid, symbolize
from .config import StrategyConfig
from .decode import FLOW_CALL_INDIRECT, FLOW_JUMP_INDIRECT
from .eval import PHASES, GroundTruth, JumpTableRecord
from .image import BinaryImage
from .recursive import (SEED_REACHABLE, CfgHooks, DisasmResult,
                        apply_gap_heuristics, recursive_descent)
from .sweep import SweepResult, linear_sweep

# Library routines linkers and loaders agree never come back.  Profiles
# with the shared seed list on treat a call to any of these as a stop.
KNOWN_NONRET = (
    "exit", "_exit", "_Exit", "abort", "quick_exit", "__stack_chk_fail",
    "__assert_fail", "__fortify_fail", "longjmp", "siglongjmp",
    "pthread_exit", "err", "errx", "verr", "verrx",
)

_MAX_ROUNDS = 6


@dataclass
class PipelineOutput:
    records: GroundTruth
    result: object  # DisasmResult | SweepResult
    cfg: cflow.CFG | None = None
    tables: list[cflow.JumpTable] = field(default_factory=list)
    unresolved: list[cflow.Unresolved] = field(default_factory=list)
    tail_calls: list[cflow.TailCall] = field(default_factory=list)
    nonret: cflow.NonRetSet | None = None
    entries: list[funcid.FunctionEntry] = field(default_factory=list)
    sym: symbolize.SymbolizeResult | None = None
    main: int | None = None


class _NonRetHooks(CfgHooks):
    """Descent asks before decoding past a call; the answer is the
    member set the last analysis round produced."""

    def __init__(self) -> None:
        self.members: set[int] = set()

    def call_returns(self, target: int) -> bool:
        return target not in self.members


def phases_for(config: StrategyConfig) -> tuple[str, ...]:
    """Which scoring phases this flag set actually produces."""
    got = {"inst"}
    if config.symbolize_enabled:
        got.add("xref")
    if config.recursive_enabled:
        got.update(("func", "edge", "cg"))
        if config.cfg_tailcall_rules != "none":
            got.add("tailcall")
        if config.cfg_nonret_mode != "none":
            got.add("nonret")
        if config.cfg_jt_strategy != "none":
            got.add("jtab")
    return tuple(p for p in PHASES if p in got)


def run_pipeline(image: BinaryImage, config: StrategyConfig) -> PipelineOutput:
    if config.recursive_enabled:
        return _traversal(image, config)
    return _linear(image, config)


# ------------------------------------------------------------ linear path

def _linear(image: BinaryImage, config: StrategyConfig) -> PipelineOutput:
    ranges = [(sec.vaddr, len(sec.data)) for sec in image.code_sections()]
    swept = linear_sweep(image, ranges, config.sweep_policy)
    sym = symbolize.run(image, swept, config) if config.symbolize_enabled \
        else None
    records = GroundTruth(
        instructions={(i.vaddr, i.end - i.vaddr)
                      for i in swept.instructions.values()},
        phases_run=phases_for(config),
    )
    if sym is not None:
        records.xrefs = {(x.from_, x.to, x.kind, x.width) for x in sym.xrefs}
        records.rejections = [(r.from_, r.value, r.reason)
                              for r in sym.rejections]
    return PipelineOutput(records=records, result=swept, sym=sym)


# --------------------------------------------------------- traversal path

def _seed_addresses(image: BinaryImage, config: StrategyConfig) -> set[int]:
    seeds = {image.entry_point}
    if config.funcid_symbol_entries:
        seeds.update(s.vaddr for s in image.function_symbols())
    return seeds


def _nonret_seed_vaddrs(image: BinaryImage,
                        names: tuple[str, ...]) -> set[int]:
    out = set()
    for name in names:
        sym = image.symbol_named(name)
        if sym is not None:
            out.add(sym.vaddr)
    return out


def _indirect_sites(result: DisasmResult, flow_kind: str) -> list[int]:
    return sorted(site for site in set(result.pending_indirect)
                  if result.instructions[site].flow == flow_kind)


def _traversal(image: BinaryImage, config: StrategyConfig) -> PipelineOutput:
    hooks = _NonRetHooks()
    seed_names = KNOWN_NONRET if config.cfg_nonret_seeds else ()
    hooks.members = _nonret_seed_vaddrs(image, seed_names)
    seeds = _seed_addresses(image, config)

    result: DisasmResult = DisasmResult()
    flow: cflow.CFG = cflow.CFG()
    tables: list[cflow.JumpTable] = []
    unresolved: list[cflow.Unresolved] = []
    tailcalls: list[cflow.TailCall] = []
    nonret = cflow.NonRetSet(set(hooks.members), set(hooks.members))
    entries: list[funcid.FunctionEntry] = []
    sym: symbolize.SymbolizeResult | None = None

    for _ in range(_MAX_ROUNDS):
        result = recursive_descent(image, sorted(seeds), hooks)
        apply_gap_heuristics(image, result, config, hooks)
        flow = cflow.build_edges(result)

        tables, unresolved = [], []
        if config.cfg_jt_strategy != "none":
            for site in _indirect_sites(result, FLOW_JUMP_INDIRECT):
                got = cflow.resolve_jump_table(image, result, site,
                                               config.cfg_jt_strategy, config)
                if isinstance(got, cflow.JumpTable):
                    tables.append(got)
                else:
                    unresolved.append(got)

        icall_targets: list[int] = []
        if config.cfg_indirect_call_prop != "none":
            for site in _indirect_sites(result, FLOW_CALL_INDIRECT):
                icall_targets.extend(cflow.constant_prop_call_targets(
                    image, result, site, config.cfg_indirect_call_prop))
        flow.indirect_call_targets = sorted(set(icall_targets))

        grown = {t for jt in tables for t in jt.targets if image.in_code(t)}
        grown.update(t for t in icall_targets if image.in_code(t))
        if grown - seeds:
            seeds |= grown
            continue

        if config.symbolize_enabled:
            sym = symbolize.run(image, result, config)
            flow.xref_targets = frozenset(
                x.to for x in sym.xrefs if x.kind in ("c2c", "d2c"))

        entries = funcid.collect_entries(image, result, flow, config)
        entry_vaddrs = {e.vaddr for e in entries}

        tailcalls = []
        if config.cfg_tailcall_rules != "none":
            tailcalls = cflow.detect_tail_calls(
                result, flow, entry_vaddrs, config.cfg_tailcall_rules, config)
            flow.tail_call_targets = sorted({tc.target for tc in tailcalls})
            entries = funcid.collect_entries(image, result, flow, config)
            entry_vaddrs = {e.vaddr for e in entries}

        if config.cfg_nonret_mode != "none":
            nonret = cflow.detect_nonreturning(
                image, result, flow, entry_vaddrs, config.cfg_nonret_mode,
                seed_names)
        else:
            nonret = cflow.NonRetSet(set(hooks.members), set(hooks.members))

        if nonret.members == hooks.members:
            break
        hooks.members = set(nonret.members)

    final = cflow.finalize_cfg(result, tables, tailcalls, nonret,
                               sorted(e.vaddr for e in entries))
    main = None
    if config.funcid_main_method != "none":
        main = funcid.find_main(image, result, config.funcid_main_method)

    records = _collect_records(config, result, final, tables, unresolved,
                               tailcalls, nonret, entries, sym, main)
    return PipelineOutput(records=records, result=result, cfg=final,
                          tables=tables, unresolved=unresolved,
                          tail_calls=tailcalls, nonret=nonret,
                          entries=entries, sym=sym, main=main)


def _collect_records(config, result, final, tables, unresolved, tailcalls,
                     nonret, entries, sym, main) -> GroundTruth:
    records = GroundTruth(
        instructions={(i.vaddr, i.end - i.vaddr)
                      for i in result.instructions.values()},
        functions={e.vaddr for e in entries},
        edges={(u, v) for u, v, _ in final.edges},
        call_graph=set(final.call_graph),
        tail_calls={(tc.site, tc.target) for tc in tailcalls},
        nonret=set(nonret.members),
        main=main,
        phases_run=phases_for(config),
        provenance={v: tag for v, tag in result.provenance.items()
                    if tag != SEED_REACHABLE},
        jt_unresolved=[(u.site, u.reason) for u in unresolved],
    )
    for jt in tables:
        records.jump_tables.append(JumpTableRecord(
            jt.site, jt.base, jt.entry_width, tuple(jt.targets)))
    if sym is not None:
        records.xrefs = {(x.from_, x.to, x.kind, x.width) for x in sym.xrefs}
        records.rejections = [(r.from_, r.value, r.reason)
                              for r in sym.rejections]
    return records
