"""Linear sweep disassembly with pluggable error handling.

Three policies cover the spectrum of shipped linear tools:

  skip_byte       on an undecodable byte, record the error, move one
                  byte forward, resume.
  psi_repair      trace back from the error to an unconditional control
                  transfer, overwrite the padding after it with nops in
                  a scratch copy, and sweep the range again.  A repair
                  that cannot apply abandons the rest of the range, so
                  the sweep resynchronizes at the next range start.
                  After the pass, direct branch targets that are not
                  instruction starts are flagged as invalid transfers
                  and get the same treatment, anchored at a preceding
                  zero-started instruction near the target.
  exclude_region  drop every byte between the last unconditional
                  transfer before the error and the next symbol start
                  (or range end), then resume there.

Errors are data: the sweep never raises, it records.  The loaded image
is never written; repairs act on a per-run scratch copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .decode import (FLOW_JUMP, FLOW_JUMP_INDIRECT, FLOW_RET, Instruction,
                     InvalidOpcode, decode_bytes)
from .image import BinaryImage

SKIP_BYTE = "skip_byte"
PSI_REPAIR = "psi_repair"
EXCLUDE_REGION = "exclude_region"
POLICIES = (SKIP_BYTE, PSI_REPAIR, EXCLUDE_REGION)

BAD_OPCODE = "bad_opcode"
INVALID_TRANSFER = "invalid_transfer"

# Flow kinds that end a run of code for sure: unconditional jumps and
# returns.  Calls and conditional jumps fall through, so they anchor
# nothing.
_NON_FALLTHROUGH = (FLOW_JUMP, FLOW_JUMP_INDIRECT, FLOW_RET)

# Canonical multi-byte nop encodings, longest first so the greedy
# matcher takes whole units.
_LONG_NOPS = [bytes.fromhex(h) for h in (
    "66662e0f1f840000000000",
    "662e0f1f840000000000",
    "660f1f840000000000",
    "0f1f840000000000",
    "0f1f8000000000",
    "660f1f440000",
    "0f1f440000",
    "0f1f4000",
    "0f1f00",
    "6690",
)]

_SINGLE_PADDING = frozenset((0x00, 0x90, 0xCC))


@dataclass
class SweepError:
    vaddr: int
    cause: str  # bad_opcode | invalid_transfer
    repaired: bool = False


@dataclass
class SweepResult:
    instructions: dict[int, Instruction] = field(default_factory=dict)
    errors: list[SweepError] = field(default_factory=list)
    excluded: list[tuple[int, int]] = field(default_factory=list)

    def sorted_instructions(self) -> list[Instruction]:
        return [self.instructions[a] for a in sorted(self.instructions)]


def detect_padding(image: BinaryImage, vaddr: int) -> tuple[int, int] | None:
    """Maximal run of padding starting exactly at vaddr, or None.

    Padding is any mix of 0x00 / 0x90 / 0xCC bytes and canonical long
    nop encodings.
    """
    sec = image.section_at(vaddr)
    if sec is None or sec.kind != "code":
        return None
    size = _padding_run(sec.data, vaddr - sec.vaddr, len(sec.data))
    return (vaddr, size) if size else None


def _padding_run(buf, off: int, limit: int) -> int:
    start = off
    while off < limit:
        for pat in _LONG_NOPS:
            if buf[off:off + len(pat)] == pat:
                off += len(pat)
                break
        else:
            if buf[off] in _SINGLE_PADDING:
                off += 1
            else:
                break
    return off - start


def linear_sweep(image: BinaryImage, ranges: list[tuple[int, int]],
                 policy: str) -> SweepResult:
    """Scan each range front to back, handling errors per policy."""
    if policy not in POLICIES:
        raise ValueError(f"unknown sweep policy {policy!r}")
    run = _Run(image)
    for vaddr, size in ranges:
        if policy == SKIP_BYTE:
            run.scan_skipping(vaddr, size)
        elif policy == EXCLUDE_REGION:
            run.scan_excluding(vaddr, size)
        else:
            run.scan_repairing(vaddr, size)
    if policy == PSI_REPAIR:
        run.validate_transfers(ranges)
    return run.result


def psi_repair(image: BinaryImage, error: SweepError,
               prior: SweepResult) -> tuple[list[tuple[int, int]],
                                            tuple[int, int] | None]:
    """Compute the repair for one sweep error.

    Returns (padding spans to overwrite with nops, enclosing range to
    sweep again).  A declined repair returns ([], None) and the error
    keeps repaired=False.  Bytes are not written here; the caller owns
    the scratch copy.
    """
    anchor = error.vaddr
    if error.cause == INVALID_TRANSFER:
        # Only the zero-started flavor of the public implementation:
        # some instruction shortly before the target must begin with a
        # zero byte, else decline.
        zero = _preceding(prior, anchor, lambda i: i.raw[:1] == b"\x00")
        if zero is None:
            return [], None
        anchor = zero.vaddr
    transfer = _preceding(prior, anchor,
                          lambda i: i.flow in _NON_FALLTHROUGH)
    if transfer is None:
        return [], None
    pad = detect_padding(image, transfer.end)
    if pad is None:
        return [], None
    sec = image.section_at(error.vaddr)
    return [pad], (sec.vaddr, len(sec.data))


def _preceding(prior: SweepResult, vaddr: int, want) -> Instruction | None:
    best = None
    for insn in prior.instructions.values():
        if insn.vaddr < vaddr and want(insn):
            if best is None or insn.vaddr > best.vaddr:
                best = insn
    return best


class _Run:
    """State for one linear_sweep call: result so far plus scratch
    copies of any section the repair policy has patched."""

    def __init__(self, image: BinaryImage):
        self.image = image
        self.result = SweepResult()
        self._scratch: dict[int, bytearray] = {}
        self._errors: dict[tuple[int, str], SweepError] = {}

    def _buf(self, sec) -> bytes | bytearray:
        return self._scratch.get(sec.vaddr, sec.data)

    def _record(self, vaddr: int, cause: str) -> SweepError:
        key = (vaddr, cause)
        if key not in self._errors:
            self._errors[key] = SweepError(vaddr, cause)
            self.result.errors.append(self._errors[key])
        return self._errors[key]

    def scan_skipping(self, vaddr: int, size: int) -> None:
        sec = self.image.section_at(vaddr)
        buf = self._buf(sec)
        pos = vaddr
        end = vaddr + size
        while pos < end:
            got = decode_bytes(buf, pos - sec.vaddr, pos, self.image.mode)
            if isinstance(got, InvalidOpcode) or got.end > end:
                self._record(pos, BAD_OPCODE)
                pos += 1
                continue
            self.result.instructions[pos] = got
            pos = got.end

    # exclude_region

    def scan_excluding(self, vaddr: int, size: int) -> None:
        sec = self.image.section_at(vaddr)
        buf = self._buf(sec)
        pos = vaddr
        end = vaddr + size
        while pos < end:
            got = decode_bytes(buf, pos - sec.vaddr, pos, self.image.mode)
            if not isinstance(got, InvalidOpcode) and got.end <= end:
                self.result.instructions[pos] = got
                pos = got.end
                continue
            self._record(pos, BAD_OPCODE)
            transfer = _preceding(self.result, pos,
                                  lambda i: i.flow in _NON_FALLTHROUGH)
            lo = transfer.end if transfer is not None and transfer.end >= vaddr \
                else vaddr
            hi = self._resync_point(pos, end)
            self._drop_instructions(lo, hi)
            self.result.excluded.append((lo, hi - lo))
            pos = hi

    def _resync_point(self, vaddr: int, limit: int) -> int:
        nxt = [s.vaddr for s in self.image.symbols
               if vaddr < s.vaddr < limit]
        return min(nxt) if nxt else limit

    # psi_repair

    def scan_repairing(self, vaddr: int, size: int) -> None:
        """Sweep one range; an error either gets repaired (then the
        range restarts on the patched bytes) or ends the range."""
        sec = self.image.section_at(vaddr)
        end = vaddr + size
        attempted: set[int] = set()
        while True:
            self._drop_instructions(vaddr, end)
            buf = self._buf(sec)
            pos = vaddr
            err = None
            while pos < end:
                got = decode_bytes(buf, pos - sec.vaddr, pos, self.image.mode)
                if isinstance(got, InvalidOpcode) or got.end > end:
                    err = self._record(pos, BAD_OPCODE)
                    break
                self.result.instructions[pos] = got
                pos = got.end
            if err is None:
                return
            if err.vaddr in attempted:
                return
            attempted.add(err.vaddr)
            patches, _resweep = psi_repair(self.image, err, self.result)
            if not patches or not self._apply(patches):
                return
            err.repaired = True

    def _apply(self, patches: list[tuple[int, int]]) -> bool:
        changed = False
        for vaddr, size in patches:
            sec = self.image.section_at(vaddr)
            if sec.vaddr not in self._scratch:
                self._scratch[sec.vaddr] = bytearray(sec.data)
            buf = self._scratch[sec.vaddr]
            lo = vaddr - sec.vaddr
            for i in range(lo, lo + size):
                if buf[i] != 0x90:
                    buf[i] = 0x90
                    changed = True
        return changed

    def _drop_instructions(self, lo: int, hi: int) -> None:
        for addr in [a for a in self.result.instructions if lo <= a < hi]:
            del self.result.instructions[addr]

    def validate_transfers(self, ranges: list[tuple[int, int]]) -> None:
        """Flag direct branch targets that are not instruction starts,
        repair what the zero-padding rule allows, and settle."""
        attempted: set[int] = set()
        while True:
            progressed = False
            for target in self._invalid_targets(ranges):
                if target in attempted:
                    continue
                attempted.add(target)
                err = self._record(target, INVALID_TRANSFER)
                patches, _resweep = psi_repair(self.image, err, self.result)
                if patches and self._apply(patches):
                    err.repaired = True
                    for vaddr, size in ranges:
                        self.scan_repairing(vaddr, size)
                    progressed = True
                    break
            if not progressed:
                return

    def _invalid_targets(self, ranges: list[tuple[int, int]]) -> list[int]:
        def inside(a: int) -> bool:
            return any(lo <= a < lo + sz for lo, sz in ranges)

        out = []
        for insn in self.result.sorted_instructions():
            t = insn.branch_target
            if t is not None and inside(t) and t not in self.result.instructions:
                out.append(t)
        return out
