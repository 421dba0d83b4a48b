"""Reference classification: candidates, acceptance rules, tables."""

import pytest
from hypothesis import given, strategies as st

from disasmkit.config import StrategyConfig
from disasmkit.recursive import recursive_descent
from disasmkit.symbolize import (AddressTable, Candidate, MAGIC_VALUES,
                                 REJECT_FLOAT, REJECT_MAGIC, REJECT_NOT_ENTRY,
                                 REJECT_OUT_OF_REGION, REJECT_STRING_OVERLAP,
                                 REJECT_TOO_SMALL, Rejection, Xref,
                                 arithmetic_extent, ascii_extent,
                                 classify_candidate, extract_candidates,
                                 infer_types, run, scan_address_tables,
                                 string_extent, utf16_extent)

from helpers import raw_image


def custom(**kw) -> StrategyConfig:
    return StrategyConfig().with_overrides(
        {k.replace("_", ".", 1): v for k, v in kw.items()})


def program(text: bytes, data: bytes, *, mode: str = "x64",
            data_vaddr: int = 0x2000, symbols=(), extra=()):
    image = raw_image(mode=mode, entry=0x1000,
                      sections=[(".text", 0x1000, "code", text),
                                (".data", data_vaddr, "data", data),
                                *extra],
                      symbols=symbols)
    return image, recursive_descent(image, [0x1000])


def words(values, width=8):
    return b"".join(v.to_bytes(width, "little") for v in values)


# --- extent helpers ---------------------------------------------------

def test_ascii_extent_needs_two_chars_and_terminator():
    assert ascii_extent(b"hi\x00", 0) == 3
    assert ascii_extent(b"h\x00", 0) == 0
    assert ascii_extent(b"hi", 0) == 0
    assert ascii_extent(b"xhi\x00", 1) == 3


def test_ascii_extent_accepts_whitespace_controls():
    assert ascii_extent(b"a\tb\n\x00", 0) == 5


def test_utf16_extent_needs_wide_terminator():
    assert utf16_extent(b"a\x00b\x00\x00\x00", 0) == 6
    assert utf16_extent(b"a\x00\x00\x00", 0) == 0
    assert utf16_extent(b"a\x00b\x00", 0) == 0


def test_string_extent_tries_narrow_form_first():
    assert string_extent(b"ab\x00", 0) == 3
    assert string_extent(b"a\x00b\x00\x00\x00", 0) == 6
    assert string_extent(b"\x00\x00\x00", 0) == 0


def test_arithmetic_extent_needs_three_units():
    assert arithmetic_extent(words([1, 2], 4), 0, 4) == 0
    assert arithmetic_extent(words([1, 2, 3], 4), 0, 4) == 12
    assert arithmetic_extent(words([1, 2, 4], 4), 0, 4) == 0


def test_arithmetic_extent_runs_until_stride_breaks():
    buf = words([0, 4, 8, 12, 99], 4)
    assert arithmetic_extent(buf, 0, 4) == 16


def test_arithmetic_extent_allows_constant_run():
    assert arithmetic_extent(words([7, 7, 7], 4), 0, 4) == 12


@given(st.integers(min_value=3, max_value=8),
       st.integers(min_value=0, max_value=1000),
       st.integers(min_value=0, max_value=64))
def test_arithmetic_extent_matches_constructed_run(n, start, stride):
    values = [start + i * stride for i in range(n)]
    buf = words(values + [values[-1] + stride + 1], 4)
    assert arithmetic_extent(buf, 0, 4) == n * 4


# --- candidate extraction ---------------------------------------------

def test_operand_and_data_unit_candidates():
    image, result = program(bytes.fromhex("b800200000" "c3"),
                            words([0, 0], 8))
    cands = extract_candidates(image, result, custom())
    operands = [c for c in cands if c.origin == "operand"]
    units = [c for c in cands if c.origin == "data_unit"]
    assert operands == [Candidate(0x1000, 0x2000, 8, True, "operand")]
    assert [c.from_ for c in units] == [0x2000, 0x2008]
    assert all(c.aligned for c in units)


def test_byte_alignment_covers_every_offset():
    image, result = program(bytes.fromhex("c3"), bytes(16))
    cands = extract_candidates(image, result,
                               custom(symbolize_alignment="none"))
    units = [c.from_ for c in cands if c.origin == "data_unit"]
    assert units == list(range(0x2000, 0x2009))
    aligned = [c for c in cands if c.origin == "data_unit" and c.aligned]
    assert [c.from_ for c in aligned] == [0x2000, 0x2008]


def test_xref_exception_adds_referenced_offsets():
    # operand points at 0x2003, off the four byte grid
    image, result = program(bytes.fromhex("b803200000" "c3"), bytes(16))
    cands = extract_candidates(
        image, result, custom(symbolize_alignment="xref_exception"))
    units = [c.from_ for c in cands if c.origin == "data_unit"]
    assert units == [0x2000, 0x2003, 0x2004, 0x2008]


@given(st.binary(min_size=8, max_size=40))
def test_aligned_units_are_subset_of_byte_stride(data):
    image, result = program(bytes.fromhex("c3"), data)
    by_addr = {}
    for c in extract_candidates(image, result,
                                custom(symbolize_alignment="none")):
        if c.origin == "data_unit":
            by_addr[c.from_] = c.value
    for c in extract_candidates(image, result, custom()):
        if c.origin == "data_unit":
            assert by_addr[c.from_] == c.value


# --- acceptance rules -------------------------------------------------

def test_magic_filter_floor_and_sentinels():
    image, result = program(bytes.fromhex("c3"), bytes(8))
    cfg = custom(symbolize_magic_values=True)

    def verdict(value):
        return classify_candidate(
            Candidate(0x1000, value, 8, True, "operand"),
            image, result, cfg)

    assert verdict(4095).reason == REJECT_TOO_SMALL
    # 4096 clears the floor; here it happens to be the ret itself
    assert verdict(4096).kind == "c2c"
    for value in MAGIC_VALUES:
        assert verdict(value).reason == REJECT_MAGIC


def test_magic_filter_off_lets_sentinels_through():
    image, result = program(bytes.fromhex("c3"), bytes(8))
    got = classify_candidate(Candidate(0x1000, 0xFFFF, 8, True, "operand"),
                             image, result, custom())
    assert got.reason == REJECT_OUT_OF_REGION


def test_code_target_must_be_instruction_start():
    image, result = program(bytes.fromhex("b800100000" "c3"), bytes(8))
    hit = classify_candidate(Candidate(0x2000, 0x1000, 8, True, "data_unit"),
                             image, result, custom())
    assert hit == Xref(0x2000, 0x1000, "d2c", 8, "data_unit")
    miss = classify_candidate(Candidate(0x2000, 0x1001, 8, True, "data_unit"),
                              image, result, custom())
    assert miss.reason == REJECT_OUT_OF_REGION


def test_entry_only_rejects_mid_function_targets():
    image, result = program(bytes.fromhex("90" "c3"), bytes(8),
                            symbols=[("f", 0x1000, 2, "func")])
    cfg = custom(symbolize_code_targets_entry_only=True)
    mid = classify_candidate(Candidate(0x2000, 0x1001, 8, True, "data_unit"),
                             image, result, cfg)
    assert mid.reason == REJECT_NOT_ENTRY
    entry = classify_candidate(Candidate(0x2000, 0x1000, 8, True, "data_unit"),
                               image, result, cfg)
    assert entry.kind == "d2c"


def test_margin_accepts_pointer_past_section_end():
    # target sits in the hole between two data sections
    image, result = program(
        bytes.fromhex("b800220000" "c3"), bytes(16),
        extra=[(".rodata", 0x3000, "data", bytes(16))])
    cand = Candidate(0x1000, 0x2200, 8, True, "operand")
    strict = classify_candidate(cand, image, result, custom())
    assert strict.reason == REJECT_OUT_OF_REGION
    wide = classify_candidate(cand, image, result,
                              custom(symbolize_region_margin=1024))
    assert wide == Xref(0x1000, 0x2200, "c2d", 8, "operand")


def test_float_typed_unit_rejected_when_dropping_floats():
    # movsd loads the word at 0x2000, so its bytes carry a float type
    image, result = program(bytes.fromhex("f20f10042500200000" "c3"),
                            words([0x1000, 0], 8))
    cfg = custom(symbolize_drop_float_entries=True)
    unit = classify_candidate(Candidate(0x2000, 0x1000, 8, True, "data_unit"),
                              image, result, cfg)
    assert unit.reason == REJECT_FLOAT
    operand = classify_candidate(Candidate(0x1000, 0x2000, 8, True, "operand"),
                                 image, result, cfg)
    assert operand.kind == "c2d"


def test_string_overlap_verdict_follows_preference():
    image, result = program(bytes.fromhex("b800200000" "c3"),
                            b"hi\x00" + bytes(13))
    cand = Candidate(0x2001, 0x1000, 8, False, "data_unit")
    pref = classify_candidate(
        cand, image, result, custom(symbolize_string_preference="string"))
    assert pref.reason == REJECT_STRING_OVERLAP
    keep = classify_candidate(
        cand, image, result, custom(symbolize_string_preference="pointer"))
    assert keep.kind == "d2c"


# --- type inference ---------------------------------------------------

def test_float_loads_tag_data_with_width():
    text = bytes.fromhex("f30f10042500200000"    # movss 0x2000
                         "f20f10042508200000"    # movsd 0x2008
                         "c3")
    image, result = program(text, bytes(16))
    types = infer_types(image, result, custom())
    assert [(t.vaddr, t.kind, t.extent) for t in types] == \
        [(0x2000, "float", 4), (0x2008, "float", 8)]


def test_strings_only_at_referenced_addresses():
    image, result = program(bytes.fromhex("b800200000" "c3"),
                            b"hi\x00\x00yo\x00\x00" + bytes(8))
    types = infer_types(image, result, custom())
    assert [(t.vaddr, t.kind, t.extent) for t in types] == \
        [(0x2000, "string", 3)]


def test_overlapping_type_tags_first_wins():
    text = bytes.fromhex("b800200000" "b801200000" "c3")
    image, result = program(text, b"abc\x00" + bytes(12))
    types = infer_types(image, result, custom())
    assert [(t.vaddr, t.extent) for t in types] == [(0x2000, 4)]


def test_float_evidence_beats_string_shape():
    text = bytes.fromhex("f30f10042500200000" "b800200000" "c3")
    image, result = program(text, b"hi\x00" + bytes(13))
    types = infer_types(image, result, custom())
    assert [(t.vaddr, t.kind) for t in types] == [(0x2000, "float")]


# --- address tables ---------------------------------------------------

def test_consecutive_pointers_form_one_table():
    image, result = program(bytes.fromhex("90" "c3"),
                            words([0x1000, 0x1001], 8))
    tables, xrefs = scan_address_tables(image, result, custom())
    assert tables == [AddressTable(0x2000, (0x1000, 0x1001), 8)]
    assert xrefs == [Xref(0x2000, 0x1000, "d2c", 8, "address_table"),
                     Xref(0x2008, 0x1001, "d2c", 8, "address_table")]


def test_lone_pointer_respects_minimum_table_size():
    image, result = program(bytes.fromhex("c3"), words([0x1000, 0], 8))
    tables, xrefs = scan_address_tables(image, result, custom())
    assert tables == []
    assert xrefs == [Xref(0x2000, 0x1000, "d2c", 8, "data_unit")]
    tables, xrefs = scan_address_tables(
        image, result, custom(symbolize_min_table_size=2))
    assert (tables, xrefs) == ([], [])


def test_table_splits_where_targets_jump_far():
    values = [0x3FFFF8, 0x400000, 0x500000, 0x500008]
    image, result = program(
        bytes.fromhex("c3"), words(values, 8),
        extra=[(".lo", 0x3FFFF0, "data", bytes(0x20)),
               (".hi", 0x500000, "data", bytes(0x10))])
    whole, _ = scan_address_tables(image, result, custom())
    assert [t.entries for t in whole] == [tuple(values)]
    split, _ = scan_address_tables(
        image, result, custom(symbolize_table_split_distance=0xFFFFF))
    assert [t.entries for t in split] == \
        [(0x3FFFF8, 0x400000), (0x500000, 0x500008)]


def test_mid_function_table_entries_dropped():
    image, result = program(bytes.fromhex("90" "c3"),
                            words([0x1000, 0x1001], 8),
                            symbols=[("f", 0x1000, 2, "func")])
    cfg = custom(symbolize_drop_midfunction_entries=True)
    tables, xrefs = scan_address_tables(image, result, cfg)
    assert tables == []
    assert xrefs == [Xref(0x2000, 0x1000, "d2c", 8, "data_unit")]
    got = run(image, result, cfg)
    assert Rejection(0x2008, 0x1001, REJECT_NOT_ENTRY) in got.rejections


def test_sliding_walk_loses_pointer_under_string_overhang():
    # a two character UTF-16 run whose terminator doubles as the low
    # bytes of the pointer that follows; the typed walk jumps past it
    data = bytearray(0x200)
    data[0x16C:0x174] = bytes.fromhex("6100" "6200" "0000" "0408")
    image = raw_image(
        mode="x86", entry=0x08040000,
        sections=[(".text", 0x08040000, "code", bytes.fromhex("c3")),
                  (".data", 0x0804F000, "data", bytes(data))])
    result = recursive_descent(image, [0x08040000])
    sliding = custom(symbolize_sliding_walk=True,
                     symbolize_region_margin=1024,
                     symbolize_string_preference="pointer")
    _, walked = scan_address_tables(image, result, sliding)
    assert 0x0804F170 not in {x.from_ for x in walked}
    plain = custom(symbolize_alignment="none",
                   symbolize_region_margin=1024,
                   symbolize_string_preference="pointer")
    _, scanned = scan_address_tables(image, result, plain)
    assert Xref(0x0804F170, 0x08040000, "d2c", 4, "data_unit") in scanned


def test_sliding_walk_still_finds_clear_pointers():
    image, result = program(bytes.fromhex("90" "c3"),
                            words([0x1000, 0x1001], 8) + bytes(8))
    _, xrefs = scan_address_tables(
        image, result, custom(symbolize_sliding_walk=True))
    assert {(x.from_, x.to) for x in xrefs} == \
        {(0x2000, 0x1000), (0x2008, 0x1001)}


# --- whole pass -------------------------------------------------------

def test_run_merges_operand_and_data_views():
    image, result = program(bytes.fromhex("b800200000" "c3"),
                            words([0x2008, 0], 8))
    got = run(image, result, custom())
    assert got.xrefs == [Xref(0x1000, 0x2000, "c2d", 8, "operand"),
                         Xref(0x2000, 0x2008, "d2d", 8, "data_unit")]
    assert got.tables == []


def test_run_records_operand_rejections():
    image, result = program(bytes.fromhex("b800500000" "c3"), bytes(8))
    got = run(image, result, custom())
    assert Rejection(0x1000, 0x5000, REJECT_OUT_OF_REGION) in got.rejections


def test_run_is_deterministic():
    text = bytes.fromhex("b800200000" "f20f10042508200000" "c3")
    image, result = program(text, words([0x2008, 0x1000, 0], 8) + b"no\x00")
    cfg = custom(symbolize_magic_values=True,
                 symbolize_drop_float_entries=True)
    first = run(image, result, cfg)
    second = run(image, result, cfg)
    assert first.xrefs == second.xrefs
    assert first.tables == second.tables
    assert first.types == second.types
    assert first.rejections == second.rejections
