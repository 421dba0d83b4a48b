from hypothesis import given
from hypothesis import strategies as st
import pytest

from disasmkit.image import BinaryImage, Section, SymbolEntry, code_regions
from disasmkit.sweep import (BAD_OPCODE, EXCLUDE_REGION, INVALID_TRANSFER,
                             PSI_REPAIR, SKIP_BYTE, detect_padding,
                             linear_sweep)

from helpers import FixtureBuilder


def region_ranges(img):
    return [(r.start, r.size) for r in code_regions(img)]


def mem_image(data: bytes, vaddr: int = 0x1000,
              symbols: tuple = ()) -> BinaryImage:
    return BinaryImage(path="<mem>", mode="x64", entry_point=vaddr,
                       sections=(Section(".text", vaddr, data, "code"),),
                       symbols=symbols)


def span_addrs(result, lo, hi):
    return sorted(a for a in result.instructions if lo <= a < hi)


# push rbp; mov rbp,rsp; pop rbp; ret
CLEAN = bytes.fromhex("554889e55dc3")


def clean_image(tmp_path):
    return (FixtureBuilder("x64")
            .section(".text", 0x1000, "code", CLEAN)
            .symbol("f", 0x1000, len(CLEAN))
            .entry_at(0x1000)
            .build(tmp_path))


@pytest.mark.parametrize("policy", [SKIP_BYTE, PSI_REPAIR, EXCLUDE_REGION])
def test_clean_code_tiles_without_errors(tmp_path, policy):
    img = clean_image(tmp_path)
    res = linear_sweep(img, region_ranges(img), policy)
    assert sorted(res.instructions) == [0x1000, 0x1001, 0x1004, 0x1005]
    assert res.errors == []
    assert res.excluded == []


def test_unknown_policy_rejected(tmp_path):
    img = clean_image(tmp_path)
    with pytest.raises(ValueError):
        linear_sweep(img, region_ranges(img), "resynthesize")


@given(st.binary(min_size=1, max_size=96))
def test_skip_byte_instructions_plus_skips_tile_the_range(data):
    res = linear_sweep(mem_image(data), [(0x1000, len(data))], SKIP_BYTE)
    covered = []
    for insn in res.instructions.values():
        assert insn.end <= 0x1000 + len(data)
        covered.extend(range(insn.vaddr, insn.end))
    covered.extend(err.vaddr for err in res.errors)
    assert sorted(covered) == list(range(0x1000, 0x1000 + len(data)))
    assert all(err.cause == BAD_OPCODE for err in res.errors)


# Self-contained encodings with no control transfers; any concatenation
# sweeps cleanly, so the three policies cannot diverge.
_POOL = [bytes.fromhex(h) for h in
         ("90", "55", "5d", "31c0", "4889e5", "b801000000", "0f1f4000")]


@given(st.lists(st.sampled_from(_POOL), min_size=1, max_size=24))
def test_policies_agree_when_nothing_goes_wrong(units):
    data = b"".join(units)
    img = mem_image(data, symbols=(SymbolEntry("f", 0x1000, len(data), "func"),))
    results = [linear_sweep(img, region_ranges(img), p) for p in
               (SKIP_BYTE, PSI_REPAIR, EXCLUDE_REGION)]
    baseline = sorted(results[0].instructions)
    for res in results:
        assert sorted(res.instructions) == baseline
        assert res.errors == []
        assert res.excluded == []


def test_padding_run_shapes(tmp_path):
    data = (b"\xc3"                    # 0x1000 not padding
            + b"\x00\x00\x00"          # 0x1001 three zeros
            + b"\x55"                  # 0x1004 stops the run
            + bytes.fromhex("662e0f1f840000000000")  # 0x1005 long nop
            + b"\x90\x90"              # 0x100f mixes into the same run
            + b"\xc3")
    img = (FixtureBuilder("x64")
           .section(".text", 0x1000, "code", data)
           .entry_at(0x1000)
           .build(tmp_path))
    assert detect_padding(img, 0x1000) is None
    assert detect_padding(img, 0x1001) == (0x1001, 3)
    assert detect_padding(img, 0x1005) == (0x1005, 12)
    assert detect_padding(img, 0x100f) == (0x100f, 2)


def test_padding_only_inside_code_sections(tmp_path):
    img = (FixtureBuilder("x64")
           .section(".text", 0x1000, "code", b"\xc3")
           .section(".rodata", 0x2000, "data", b"\x00\x00")
           .entry_at(0x1000)
           .build(tmp_path))
    assert detect_padding(img, 0x2000) is None


def fig_bad_opcode_image(tmp_path):
    # f1 ends in ret, three zero bytes of padding, then f2.  Sweeping
    # the gap pairs the zeros into two-byte adds and the odd byte spills
    # over the range end, which is the error to repair.
    data = (bytes.fromhex("b801000000c3")   # 0x1000 f1: mov $1,%eax; ret
            + b"\x00\x00\x00"               # 0x1006 padding
            + bytes.fromhex("555dc3"))      # 0x1009 f2
    return (FixtureBuilder("x64")
            .section(".text", 0x1000, "code", data)
            .symbol("f1", 0x1000, 6)
            .symbol("f2", 0x1009, 3)
            .entry_at(0x1000)
            .build(tmp_path))


def test_repair_substitutes_padding_after_the_ret(tmp_path):
    img = fig_bad_opcode_image(tmp_path)
    res = linear_sweep(img, region_ranges(img), PSI_REPAIR)
    assert [(e.vaddr, e.cause, e.repaired) for e in res.errors] == \
        [(0x1008, BAD_OPCODE, True)]
    assert span_addrs(res, 0x1006, 0x1009) == [0x1006, 0x1007, 0x1008]
    assert all(res.instructions[a].mnemonic == "nop"
               for a in (0x1006, 0x1007, 0x1008))
    assert span_addrs(res, 0x1009, 0x100c) == [0x1009, 0x100a, 0x100b]


def test_repair_never_touches_the_image(tmp_path):
    img = fig_bad_opcode_image(tmp_path)
    before = img.sections[0].data
    first = linear_sweep(img, region_ranges(img), PSI_REPAIR)
    second = linear_sweep(img, region_ranges(img), PSI_REPAIR)
    assert img.sections[0].data == before
    assert sorted(first.instructions) == sorted(second.instructions)


def test_repair_declined_with_no_preceding_transfer(tmp_path):
    img = (FixtureBuilder("x64")
           .section(".text", 0x1000, "code", b"\x06\xc3")
           .entry_at(0x1000)
           .build(tmp_path))
    res = linear_sweep(img, [(0x1000, 2)], PSI_REPAIR)
    assert [(e.vaddr, e.repaired) for e in res.errors] == [(0x1000, False)]
    assert res.instructions == {}


def data_in_code_image(tmp_path):
    # f1 ends in repz retq, then zero padding, then eight bytes of data
    # whose second position happens to decode, then f2.
    data = (bytes.fromhex("9df3c3")          # 0x2000 f1: popfq; repz retq
            + b"\x00\x00\x00"                # 0x2003 padding
            + bytes.fromhex("066363a506060606")  # 0x2006 table bytes
            + bytes.fromhex("555dc3"))       # 0x200e f2
    return (FixtureBuilder("x64")
            .section(".text", 0x2000, "code", data)
            .symbol("f1", 0x2000, 3)
            .symbol("tbl", 0x2006, 8, "obj")
            .symbol("f2", 0x200e, 3)
            .entry_at(0x2000)
            .build(tmp_path))


TABLE = (0x2006, 0x200e)


def test_skip_byte_decodes_into_the_data(tmp_path):
    img = data_in_code_image(tmp_path)
    res = linear_sweep(img, region_ranges(img), SKIP_BYTE)
    assert 0x2007 in res.instructions     # three data bytes line up
    assert res.instructions[0x2007].length == 3
    assert any(e.cause == BAD_OPCODE for e in res.errors)


def test_declined_repair_abandons_to_the_next_range(tmp_path):
    img = data_in_code_image(tmp_path)
    res = linear_sweep(img, region_ranges(img), PSI_REPAIR)
    assert span_addrs(res, *TABLE) == []
    assert span_addrs(res, 0x200e, 0x2011) == [0x200e, 0x200f, 0x2010]
    outcomes = {(e.vaddr, e.repaired) for e in res.errors}
    assert (0x200a, True) in outcomes     # padding repair applied once
    assert (0x2006, False) in outcomes    # second attempt declined


def test_exclusion_covers_from_transfer_to_range_end(tmp_path):
    img = data_in_code_image(tmp_path)
    res = linear_sweep(img, region_ranges(img), EXCLUDE_REGION)
    assert span_addrs(res, *TABLE) == []
    assert res.excluded == [(0x2003, 11)]
    assert span_addrs(res, 0x200e, 0x2011) == [0x200e, 0x200f, 0x2010]


def test_exclusion_resynchronizes_at_the_next_symbol(tmp_path):
    data = (bytes.fromhex("b801000000c3")   # 0x3000 f1
            + b"\x06\x06"                   # 0x3006 junk
            + bytes.fromhex("555dc3"))      # 0x3008 f2
    img = (FixtureBuilder("x64")
           .section(".text", 0x3000, "code", data)
           .symbol("f1", 0x3000, 6)
           .symbol("f2", 0x3008, 3)
           .entry_at(0x3000)
           .build(tmp_path))
    res = linear_sweep(img, [(0x3000, len(data))], EXCLUDE_REGION)
    assert res.excluded == [(0x3006, 2)]
    assert 0x3008 in res.instructions
    assert len(res.errors) == 1


def test_invalid_transfer_repaired_through_zero_padding(tmp_path):
    # f0 jumps to unsymbolized code at 0x500b.  The zero padding before
    # it misdecodes as adds, the last one swallowing the target, so the
    # jump lands mid-instruction until the padding is repaired.
    data = (bytes.fromhex("eb09")            # 0x5000 f0: jmp 0x500b
            + bytes.fromhex("b82a000000c3")  # 0x5002 f1: mov $42,%eax; ret
            + b"\x00\x00\x00"                # 0x5008 padding
            + bytes.fromhex("554889e55dc3"))  # 0x500b unsymbolized code
    img = (FixtureBuilder("x64")
           .section(".text", 0x5000, "code", data)
           .symbol("f0", 0x5000, 2)
           .symbol("f1", 0x5002, 6)
           .entry_at(0x5000)
           .build(tmp_path))
    res = linear_sweep(img, region_ranges(img), PSI_REPAIR)
    fixed = [e for e in res.errors if e.cause == INVALID_TRANSFER]
    assert [(e.vaddr, e.repaired) for e in fixed] == [(0x500b, True)]
    assert 0x500b in res.instructions
    assert res.instructions[0x500b].length == 1


def test_invalid_transfer_declined_when_padding_starts_nonzero(tmp_path):
    # Same shape, but the two filler bytes are 66 b8, which swallow the
    # target as a mov immediate.  Nothing before the target starts with
    # a zero byte, so the repair has no anchor and declines.
    data = (bytes.fromhex("eb08")            # 0x4000 f0: jmp 0x400a
            + bytes.fromhex("b82a000000c3")  # 0x4002 f1
            + bytes.fromhex("66b8")          # 0x4008 filler, not zeros
            + bytes.fromhex("b805000000c3"))  # 0x400a target code
    img = (FixtureBuilder("x64")
           .section(".text", 0x4000, "code", data)
           .symbol("f0", 0x4000, 2)
           .symbol("f1", 0x4002, 6)
           .entry_at(0x4000)
           .build(tmp_path))
    res = linear_sweep(img, region_ranges(img), PSI_REPAIR)
    flagged = [e for e in res.errors if e.cause == INVALID_TRANSFER]
    assert [(e.vaddr, e.repaired) for e in flagged] == [(0x400a, False)]
    assert 0x400a not in res.instructions
