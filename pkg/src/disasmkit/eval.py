"""Scoring recovered disassembly against ground truth.

Both sides of a comparison use the same record set and the same text
grammar, so a truth file and a result file diff cleanly.  Scoring is
per phase; each phase has a matching key and a fixed exclusion step
that removes records neither side should be judged on (padding bytes,
direct-transfer references, call fall-through edges).  The counts obey
tp + fn = |truth after exclusion| and tp + fp = |result after
exclusion| for every phase, so downstream arithmetic can rely on it.

Error attribution re-derives the false positive and false negative
sets and assigns each one exactly one cause by a fixed rule order.
Every rule is decidable from the two record sets alone; the catch-all
cause is "Other".
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from statistics import fmean

from .errors import FormatError

PHASES = ("inst", "xref", "func", "edge", "cg", "tailcall", "nonret", "jtab")

XREF_KINDS = ("c2c", "c2d", "d2c", "d2d")

CSV_HEADER = "profile,phase,avg_pre,avg_rec,min_pre,min_rec"


@dataclass(frozen=True)
class JumpTableRecord:
    site: int
    base: int
    entry_width: int
    targets: tuple[int, ...]


@dataclass
class GroundTruth:
    """One side of a comparison: a truth file or a tool's output.

    Sets hold hashable record keys; lists hold records whose order the
    file determines.  `header` keeps leading comment lines so a parsed
    canonical file emits byte-identically.
    """

    instructions: set[tuple[int, int]] = field(default_factory=set)
    functions: set[int] = field(default_factory=set)
    xrefs: set[tuple[int, int, str, int]] = field(default_factory=set)
    jump_tables: list[JumpTableRecord] = field(default_factory=list)
    nonret: set[int] = field(default_factory=set)
    padding: list[tuple[int, int]] = field(default_factory=list)
    edges: set[tuple[int, int]] = field(default_factory=set)
    tail_calls: set[tuple[int, int]] = field(default_factory=set)
    call_graph: set[tuple[int, int, int]] = field(default_factory=set)
    main: int | None = None
    header: tuple[str, ...] = ()
    # Optional self-description a result file may carry: seed
    # provenance per address, rejected reference candidates, jump sites
    # that stayed unresolved, and which phases the producer ran.
    provenance: dict[int, str] = field(default_factory=dict)
    rejections: list[tuple[int, int, str]] = field(default_factory=list)
    jt_unresolved: list[tuple[int, str]] = field(default_factory=list)
    phases_run: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Metrics:
    phase: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


@dataclass(frozen=True)
class ErrorAttribution:
    phase: str
    kind: str  # fp | fn
    key: tuple
    cause: str


# ---------------------------------------------------------------- parsing

def _addr(tok: str, ln: int) -> int:
    try:
        value = int(tok, 16)
    except ValueError:
        raise FormatError(f"bad address {tok!r}", ln) from None
    if value < 0:
        raise FormatError(f"bad address {tok!r}", ln)
    return value


def _num(tok: str, ln: int) -> int:
    try:
        value = int(tok, 0)
    except ValueError:
        raise FormatError(f"bad number {tok!r}", ln) from None
    if value < 0:
        raise FormatError(f"bad number {tok!r}", ln)
    return value


def _arity(parts: list[str], n: int, ln: int, tag: str) -> None:
    if len(parts) != n:
        raise FormatError(f"[{tag}] takes {n - 1} fields, got {len(parts) - 1}",
                          ln)


def parse_ground_truth(text: str) -> GroundTruth:
    """Parse the record grammar shared by truth and result files.

    `#` starts a comment.  Leading comments become the header; `#%`
    lines carry the optional result-side annotations.  Record order in
    the file does not matter.  Overlapping instruction records and
    padding that overlaps an instruction are format errors, reported
    with the line of the record that collides.
    """
    gt = GroundTruth()
    inst_lines: dict[int, int] = {}
    pad_lines: list[tuple[int, int, int]] = []
    in_header = True
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#%"):
            _parse_annotation(gt, line[2:].split(), ln)
            in_header = False
            continue
        if line.startswith("#"):
            if in_header:
                gt.header += (line[1:].lstrip(),)
            continue
        in_header = False
        line = line.split("#", 1)[0].strip()
        parts = line.split()
        tag = parts[0]
        if not (tag.startswith("[") and tag.endswith("]")):
            raise FormatError(f"expected a [tag], got {tag!r}", ln)
        tag = tag[1:-1]
        if tag == "inst":
            _arity(parts, 3, ln, tag)
            vaddr, size = _addr(parts[1], ln), _num(parts[2], ln)
            if size == 0:
                raise FormatError("zero-size instruction", ln)
            gt.instructions.add((vaddr, size))
            inst_lines.setdefault(vaddr, ln)
        elif tag == "func":
            _arity(parts, 2, ln, tag)
            gt.functions.add(_addr(parts[1], ln))
        elif tag == "main":
            _arity(parts, 2, ln, tag)
            gt.main = _addr(parts[1], ln)
        elif tag == "xref":
            _arity(parts, 5, ln, tag)
            kind = parts[1]
            if kind not in XREF_KINDS:
                raise FormatError(f"bad xref kind {kind!r}", ln)
            gt.xrefs.add((_addr(parts[2], ln), _addr(parts[3], ln), kind,
                          _num(parts[4], ln)))
        elif tag == "jtab":
            if len(parts) < 5:
                raise FormatError("[jtab] takes a site, base, entry width, "
                                  "and at least one target", ln)
            gt.jump_tables.append(JumpTableRecord(
                _addr(parts[1], ln), _addr(parts[2], ln), _num(parts[3], ln),
                tuple(_addr(p, ln) for p in parts[4:])))
        elif tag == "noret":
            _arity(parts, 2, ln, tag)
            gt.nonret.add(_addr(parts[1], ln))
        elif tag == "pad":
            _arity(parts, 3, ln, tag)
            vaddr, size = _addr(parts[1], ln), _num(parts[2], ln)
            gt.padding.append((vaddr, size))
            pad_lines.append((vaddr, size, ln))
        elif tag == "edge":
            _arity(parts, 3, ln, tag)
            gt.edges.add((_addr(parts[1], ln), _addr(parts[2], ln)))
        elif tag == "tcall":
            _arity(parts, 3, ln, tag)
            gt.tail_calls.add((_addr(parts[1], ln), _addr(parts[2], ln)))
        elif tag == "cg":
            _arity(parts, 4, ln, tag)
            gt.call_graph.add((_addr(parts[1], ln), _addr(parts[2], ln),
                               _addr(parts[3], ln)))
        else:
            raise FormatError(f"unknown record [{tag}]", ln)
    _check_invariants(gt, inst_lines, pad_lines)
    return gt


def _parse_annotation(gt: GroundTruth, parts: list[str], ln: int) -> None:
    if not parts:
        raise FormatError("empty annotation", ln)
    word = parts[0]
    if word == "prov":
        _arity(parts, 3, ln, "% prov")
        gt.provenance[_addr(parts[1], ln)] = parts[2]
    elif word == "rej":
        _arity(parts, 4, ln, "% rej")
        gt.rejections.append((_addr(parts[1], ln), _addr(parts[2], ln),
                              parts[3]))
    elif word == "jt_unresolved":
        _arity(parts, 3, ln, "% jt_unresolved")
        gt.jt_unresolved.append((_addr(parts[1], ln), parts[2]))
    elif word == "phases":
        for p in parts[1:]:
            if p not in PHASES:
                raise FormatError(f"unknown phase {p!r}", ln)
        gt.phases_run = tuple(parts[1:])
    else:
        raise FormatError(f"unknown annotation {word!r}", ln)


def _check_invariants(gt: GroundTruth, inst_lines: dict[int, int],
                      pad_lines: list[tuple[int, int, int]]) -> None:
    prev_end = -1
    prev_addr = -1
    for vaddr, size in sorted(gt.instructions):
        if vaddr < prev_end:
            ln = max(inst_lines[vaddr], inst_lines[prev_addr])
            raise FormatError(
                f"instruction {vaddr:#x} overlaps {prev_addr:#x}", ln)
        prev_end, prev_addr = vaddr + size, vaddr
    spans = sorted((v, v + s) for v, s in gt.instructions)
    for pad_lo, size, ln in sorted(pad_lines, key=lambda t: t[2]):
        pad_hi = pad_lo + size
        for lo, hi in spans:
            if lo < pad_hi and pad_lo < hi:
                raise FormatError(
                    f"padding {pad_lo:#x} overlaps instruction {lo:#x}", ln)


# ---------------------------------------------------------------- emitting

def emit_ground_truth(gt: GroundTruth) -> str:
    """Render the canonical text form: header first, then records
    grouped by tag in grammar order, sorted within each group."""
    out = io.StringIO()
    for line in gt.header:
        out.write(f"# {line}\n" if line else "#\n")
    if gt.phases_run is not None:
        out.write("#% phases " + " ".join(gt.phases_run) + "\n")
    for vaddr, size in sorted(gt.instructions):
        out.write(f"[inst] {vaddr:#x} {size}\n")
    for vaddr in sorted(gt.functions):
        out.write(f"[func] {vaddr:#x}\n")
    if gt.main is not None:
        out.write(f"[main] {gt.main:#x}\n")
    for from_, to, kind, width in sorted(gt.xrefs):
        out.write(f"[xref] {kind} {from_:#x} {to:#x} {width}\n")
    for jt in sorted(gt.jump_tables, key=lambda j: j.site):
        targets = " ".join(f"{t:#x}" for t in jt.targets)
        out.write(f"[jtab] {jt.site:#x} {jt.base:#x} {jt.entry_width} "
                  f"{targets}\n")
    for vaddr in sorted(gt.nonret):
        out.write(f"[noret] {vaddr:#x}\n")
    for vaddr, size in sorted(gt.padding):
        out.write(f"[pad] {vaddr:#x} {size}\n")
    for from_, to in sorted(gt.edges):
        out.write(f"[edge] {from_:#x} {to:#x}\n")
    for site, target in sorted(gt.tail_calls):
        out.write(f"[tcall] {site:#x} {target:#x}\n")
    for caller, callee, site in sorted(gt.call_graph):
        out.write(f"[cg] {caller:#x} {callee:#x} {site:#x}\n")
    for vaddr in sorted(gt.provenance):
        out.write(f"#% prov {vaddr:#x} {gt.provenance[vaddr]}\n")
    for from_, value, reason in sorted(gt.rejections):
        out.write(f"#% rej {from_:#x} {value:#x} {reason}\n")
    for site, reason in sorted(gt.jt_unresolved):
        out.write(f"#% jt_unresolved {site:#x} {reason}\n")
    return out.getvalue()


# ---------------------------------------------------------------- scoring

def _pad_ranges(gt: GroundTruth) -> list[tuple[int, int]]:
    return sorted((v, v + s) for v, s in gt.padding)


def _in_ranges(vaddr: int, ranges: list[tuple[int, int]]) -> bool:
    return any(lo <= vaddr < hi for lo, hi in ranges)


def _inst_keys(side: GroundTruth, pads: list[tuple[int, int]]) -> set[int]:
    return {v for v, _ in side.instructions if not _in_ranges(v, pads)}


def _xref_keys(side: GroundTruth,
               fp_insts: set[int]) -> set[tuple[int, int, str]]:
    """Project to the matching key, dropping direct-transfer references
    (the from site is a recorded call or tail call to that target) and
    references issued from false-positive instructions."""
    direct = {(site, callee) for _, callee, site in side.call_graph}
    direct |= set(side.tail_calls)
    out = set()
    for from_, to, kind, _ in side.xrefs:
        if kind == "c2c" and (from_, to) in direct:
            continue
        if from_ in fp_insts:
            continue
        out.add((from_, to, kind))
    return out


def _edge_keys(side: GroundTruth) -> set[tuple[int, int]]:
    """Drop call fall-through pairs: the source block contains a
    recorded call site whose instruction ends exactly at the target."""
    ends = {v: v + s for v, s in side.instructions}
    sites = [site for _, _, site in side.call_graph]

    def call_fall(u: int, v: int) -> bool:
        return any(u <= site < v and ends.get(site) == v for site in sites)

    return {(u, v) for u, v in side.edges if not call_fall(u, v)}


def _tailcall_keys(side: GroundTruth) -> set[int]:
    """Unique target functions; a jump back into the site's own
    function is recursion, not a tail call."""
    owners = sorted(side.functions)
    out = set()
    for site, target in side.tail_calls:
        owner = None
        for entry in owners:
            if entry <= site:
                owner = entry
            else:
                break
        if owner is not None and owner == target:
            continue
        out.add(target)
    return out


def _jtab_by_site(side: GroundTruth) -> dict[int, JumpTableRecord]:
    return {jt.site: jt for jt in side.jump_tables}


def _score_sets(truth: GroundTruth, result: GroundTruth,
                phase: str) -> tuple[set, set, set]:
    """(tp, fp, fn) key sets for one phase."""
    if phase == "inst":
        pads = _pad_ranges(truth)
        t = _inst_keys(truth, pads)
        r = _inst_keys(result, pads)
        return t & r, r - t, t - r
    if phase == "xref":
        pads = _pad_ranges(truth)
        fp_insts = _inst_keys(result, pads) - _inst_keys(truth, pads)
        t = _xref_keys(truth, set())
        r = _xref_keys(result, fp_insts)
        return t & r, r - t, t - r
    if phase == "func":
        return (truth.functions & result.functions,
                result.functions - truth.functions,
                truth.functions - result.functions)
    if phase == "edge":
        t = _edge_keys(truth)
        r = _edge_keys(result)
        return t & r, r - t, t - r
    if phase == "cg":
        t = {(c, e) for c, e, _ in truth.call_graph}
        r = {(c, e) for c, e, _ in result.call_graph}
        return t & r, r - t, t - r
    if phase == "tailcall":
        t = _tailcall_keys(truth)
        r = _tailcall_keys(result)
        return t & r, r - t, t - r
    if phase == "nonret":
        return (truth.nonret & result.nonret,
                result.nonret - truth.nonret,
                truth.nonret - result.nonret)
    if phase == "jtab":
        t = _jtab_by_site(truth)
        r = _jtab_by_site(result)
        full = {site for site in t.keys() & r.keys()
                if sorted(t[site].targets) == sorted(r[site].targets)}
        return full, set(r) - full, set(t) - full
    raise ValueError(f"unknown phase {phase!r}")


def score(truth: GroundTruth, result: GroundTruth, phase: str) -> Metrics:
    """Precision and recall for one phase.

    An empty result side scores precision 1.0; an empty truth side
    scores recall 1.0, so comparing a file against itself is always
    perfect.
    """
    tp_set, fp_set, fn_set = _score_sets(truth, result, phase)
    tp, fp, fn = len(tp_set), len(fp_set), len(fn_set)
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return Metrics(phase, tp, fp, fn, precision, recall)


# ---------------------------------------------------------- attribution

def _coverage_spans(gt: GroundTruth) -> list[tuple[int, int]]:
    return sorted((v, v + s) for v, s in gt.instructions)


def _unmatched_truth_jtabs(truth: GroundTruth,
                           result: GroundTruth) -> list[JumpTableRecord]:
    by_site = _jtab_by_site(result)
    out = []
    for jt in truth.jump_tables:
        got = by_site.get(jt.site)
        if got is None or sorted(got.targets) != sorted(jt.targets):
            out.append(jt)
    return out


def _inst_fp_cause(vaddr: int, size: int, truth: GroundTruth,
                   result: GroundTruth) -> str:
    """Most specific rule first: exact address facts, then byte
    overlap, then the producer's own seed tag, then raw coverage."""
    ends = {v: v + s for v, s in truth.instructions}
    for _, callee, site in truth.call_graph:
        if callee in truth.nonret and ends.get(site) == vaddr:
            return "Non-Ret"
    bad = list(_unmatched_truth_jtabs(truth, result))
    truth_by_site = _jtab_by_site(truth)
    for jt in result.jump_tables:
        got = truth_by_site.get(jt.site)
        if got is None or sorted(got.targets) != sorted(jt.targets):
            bad.append(jt)
    extents = [(jt.base, jt.base + jt.entry_width * len(jt.targets))
               for jt in bad]
    if _in_ranges(vaddr, extents):
        return "Jump-Tbl"
    pads = _pad_ranges(truth)
    if any(lo < vaddr + size and vaddr < hi for lo, hi in pads):
        return "Pad"
    prov = result.provenance.get(vaddr)
    if prov == "prologue_match":
        return "Func"
    if prov == "gap_scan":
        return "Scan"
    if not any(lo <= vaddr < hi for lo, hi in _coverage_spans(truth)):
        return "Data"
    return "Other"


def _inst_fn_cause(vaddr: int, truth: GroundTruth,
                   result: GroundTruth) -> str:
    for jt in _unmatched_truth_jtabs(truth, result):
        if vaddr in jt.targets:
            return "J-Tab"
    owner = None
    for entry in sorted(truth.functions):
        if entry <= vaddr:
            owner = entry
        else:
            break
    if owner is not None and owner not in result.functions:
        return "Func"
    return "Other"


def _func_fn_cause(entry: int, truth: GroundTruth,
                   result: GroundTruth) -> str:
    callees = {callee for _, callee, _ in truth.call_graph}
    tcall_targets = {t for _, t in truth.tail_calls}
    in_bad_table = any(entry in jt.targets
                       for jt in _unmatched_truth_jtabs(truth, result))
    if in_bad_table and entry not in callees and entry not in tcall_targets:
        return "J-Tab"
    if entry in tcall_targets and entry not in callees:
        return "T-Call"
    return "Other"


_REJECT_CAUSE = {
    "string_overlap": "Type",
    "float_typed": "Type",
    "magic_value": "Magic",
    "not_entry": "Entry",
    "out_of_region": "Region",
    "too_small": "Small",
}


def _xref_fn_cause(key: tuple[int, int, str], result: GroundTruth) -> str:
    from_, to, _ = key
    for rej_from, rej_value, reason in result.rejections:
        if rej_from == from_ and rej_value == to:
            return _REJECT_CAUSE.get(reason, "Other")
    return "Other"


def attribute_errors(truth: GroundTruth, result: GroundTruth,
                     phase: str) -> list[ErrorAttribution]:
    """One cause per false positive and false negative of the phase.

    Rules are ordered; the first that fires wins, so the output is a
    partition of the error sets.
    """
    _, fp_set, fn_set = _score_sets(truth, result, phase)
    out: list[ErrorAttribution] = []

    def add(kind: str, key, cause: str) -> None:
        if not isinstance(key, tuple):
            key = (key,)
        out.append(ErrorAttribution(phase, kind, key, cause))

    if phase == "inst":
        sizes = {v: s for v, s in result.instructions}
        for vaddr in sorted(fp_set):
            add("fp", vaddr,
                _inst_fp_cause(vaddr, sizes.get(vaddr, 1), truth, result))
        for vaddr in sorted(fn_set):
            add("fn", vaddr, _inst_fn_cause(vaddr, truth, result))
    elif phase == "func":
        for entry in sorted(fp_set):
            prov = result.provenance.get(entry)
            cause = {"prologue_match": "Func", "gap_scan": "Scan"}.get(
                prov, "Other")
            add("fp", entry, cause)
        for entry in sorted(fn_set):
            add("fn", entry, _func_fn_cause(entry, truth, result))
    elif phase == "xref":
        for key in sorted(fp_set):
            add("fp", key, "Other")
        for key in sorted(fn_set):
            add("fn", key, _xref_fn_cause(key, result))
    elif phase == "edge":
        bad_targets = {t for jt in _unmatched_truth_jtabs(truth, result)
                       for t in jt.targets}
        for key in sorted(fp_set):
            add("fp", key, "Other")
        for key in sorted(fn_set):
            add("fn", key, "J-Tab" if key[1] in bad_targets else "Other")
    elif phase == "cg":
        tcalls = truth.tail_calls
        for key in sorted(fp_set):
            add("fp", key, "Other")
        for key in sorted(fn_set):
            cause = ("T-Call" if any(t == key[1] for _, t in tcalls)
                     else "Other")
            add("fn", key, cause)
    elif phase == "jtab":
        truth_sites = {jt.site for jt in truth.jump_tables}
        result_sites = {jt.site for jt in result.jump_tables}
        for site in sorted(fp_set):
            add("fp", site, "Partial" if site in truth_sites else "Other")
        for site in sorted(fn_set):
            add("fn", site, "Partial" if site in result_sites else "Other")
    else:
        for key in sorted(fp_set):
            add("fp", key, "Other")
        for key in sorted(fn_set):
            add("fn", key, "Other")
    return out


# ------------------------------------------------------------- reporting

def emit_report(scores: list[tuple[str, str, Metrics]]) -> tuple[str, str]:
    """Aggregate (profile, binary, metrics) rows.

    Returns (table, csv).  Each profile and phase contributes one row
    holding the average and the minimum of precision and recall over
    the binaries scored.  With a single binary the average equals the
    minimum.  Row order follows first appearance of the profile and
    the fixed phase order, so rerunning the same inputs reproduces the
    bytes exactly.
    """
    groups: dict[tuple[str, str], list[Metrics]] = {}
    profile_order: list[str] = []
    for profile, _, metrics in scores:
        if profile not in profile_order:
            profile_order.append(profile)
        groups.setdefault((profile, metrics.phase), []).append(metrics)

    rows = []
    for profile in profile_order:
        for phase in PHASES:
            got = groups.get((profile, phase))
            if not got:
                continue
            rows.append((profile, phase,
                         fmean(m.precision for m in got),
                         fmean(m.recall for m in got),
                         min(m.precision for m in got),
                         min(m.recall for m in got)))

    width = max((len(p) for p, *_ in rows), default=7)
    table = io.StringIO()
    table.write(f"{'profile':<{width}}  {'phase':<8}  "
                f"{'avg pre':>7}  {'avg rec':>7}  "
                f"{'min pre':>7}  {'min rec':>7}\n")
    csv = io.StringIO()
    csv.write(CSV_HEADER + "\n")
    for profile, phase, avg_pre, avg_rec, min_pre, min_rec in rows:
        table.write(f"{profile:<{width}}  {phase:<8}  "
                    f"{avg_pre:>7.4f}  {avg_rec:>7.4f}  "
                    f"{min_pre:>7.4f}  {min_rec:>7.4f}\n")
        csv.write(f"{profile},{phase},{avg_pre:.4f},{avg_rec:.4f},"
                  f"{min_pre:.4f},{min_rec:.4f}\n")
    return table.getvalue(), csv.getvalue()
