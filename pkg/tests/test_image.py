import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disasmkit.errors import AddressError, LoadError, UnsupportedArchitecture
from disasmkit.image import code_regions, load_binary, symbol_seeds

from helpers import FixtureBuilder, build_elf


def simple_builder():
    return (FixtureBuilder("x64")
            .section(".text", 0x400000, "code", bytes.fromhex("554889e5c3"))
            .section(".rodata", 0x401000, "data", b"\x01\x02\x03\x04")
            .symbol("f", 0x400000, 5)
            .entry_at(0x400000))


def test_flat_fixture_loads_sections_symbols_and_entry(tmp_path):
    img = simple_builder().build(tmp_path)
    assert img.mode == "x64"
    assert img.entry_point == 0x400000
    assert [s.name for s in img.sections] == [".text", ".rodata"]
    assert img.sections[0].kind == "code"
    assert img.sections[1].kind == "data"
    assert img.bytes_at(0x400000, 2) == b"\x55\x48"
    assert img.symbols[0].name == "f"


def test_flat_fixture_reload_is_identical(tmp_path):
    path = simple_builder().write(tmp_path / "a.fix")
    assert load_binary(path) == load_binary(path)


def test_flat_fixture_comments_and_blank_lines_ignored(tmp_path):
    text = "# leading comment\n\nmode x64\nsection .text 1000 code 90c3 # trailing\nentry 1000\n"
    p = tmp_path / "c.fix"
    p.write_text(text)
    img = load_binary(p)
    assert img.bytes_at(0x1000, 2) == b"\x90\xc3"


@pytest.mark.parametrize("text,fragment", [
    ("section .text 1000 code 90\nentry 1000\n", "mode"),
    ("mode x64\nsection .text 1000 code 90\n", "entry"),
    ("mode x64\nsection .text 1000 code zz\nentry 1000\n", "bad section bytes"),
    ("mode arm\nsection .text 1000 code 90\nentry 1000\n", "mode must be"),
    ("mode x64\nfrobnicate\nentry 1000\n", "unknown directive"),
    ("mode x64\nsection .text 1000 code 90\nentry 2000\n", "entry point"),
    ("mode x64\nsection .a 1000 code 9090\nsection .b 1001 code 90\nentry 1000\n",
     "overlap"),
])
def test_flat_fixture_errors(tmp_path, text, fragment):
    p = tmp_path / "bad.fix"
    p.write_text(text)
    with pytest.raises(LoadError, match=fragment):
        load_binary(p)


def test_unmapped_reads_raise_address_error(tmp_path):
    img = simple_builder().build(tmp_path)
    with pytest.raises(AddressError):
        img.bytes_at(0x500000, 1)


def test_elf64_load_matches_flat_equivalent(tmp_path):
    code = bytes.fromhex("554889e5c3")
    data = b"\x01\x02\x03\x04"
    blob = build_elf("x64", [(".text", 0x400000, "code", code),
                             (".rodata", 0x401000, "data", data)],
                     [("f", 0x400000, 5, "func"), ("g", 0x401000, 4, "obj")],
                     0x400000)
    p = tmp_path / "a.elf"
    p.write_bytes(blob)
    img = load_binary(p)
    assert img.mode == "x64"
    assert img.entry_point == 0x400000
    assert [(s.name, s.vaddr, s.kind) for s in img.sections] == [
        (".text", 0x400000, "code"), (".rodata", 0x401000, "data")]
    assert img.bytes_at(0x400000, 5) == code
    syms = {s.name: s for s in img.symbols}
    assert syms["f"].kind == "func" and syms["f"].source == "symtab"
    assert syms["g"].kind == "obj"


def test_elf32_load_and_dynsym(tmp_path):
    blob = build_elf("x86", [(".text", 0x8048000, "code", b"\x90\xc3")],
                     [("f", 0x8048000, 2, "func")], 0x8048000,
                     dynsym=[("imp", 0x8048000, 0, "func")])
    p = tmp_path / "b.elf"
    p.write_bytes(blob)
    img = load_binary(p)
    assert img.mode == "x86"
    assert {s.source for s in img.symbols} == {"symtab", "dynsym"}


def test_elf_bad_magic(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"\x00\x01\x02\x03" + bytes(28))
    with pytest.raises(LoadError, match="bad magic"):
        load_binary(p)


def test_elf_unsupported_machine(tmp_path):
    blob = bytearray(build_elf("x64", [(".text", 0x1000, "code", b"\xc3")],
                               [], 0x1000))
    blob[18:20] = (40).to_bytes(2, "little")  # EM_ARM
    p = tmp_path / "arm.elf"
    p.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedArchitecture):
        load_binary(p)


def test_elf_truncated_section_headers_name_the_field(tmp_path):
    blob = build_elf("x64", [(".text", 0x1000, "code", b"\xc3")], [], 0x1000)
    p = tmp_path / "trunc.elf"
    p.write_bytes(blob[:len(blob) - 32])
    with pytest.raises(LoadError, match="section header"):
        load_binary(p)


# -- region partition ----------------------------------------------------

def region_layout(tmp_path, symbols):
    b = (FixtureBuilder("x64")
         .section(".text", 0x1000, "code", bytes(64))
         .entry_at(0x1000))
    for name, vaddr, size in symbols:
        b.symbol(name, vaddr, size)
    return b.build(tmp_path)


def test_code_regions_symbols_first_then_gaps(tmp_path):
    img = region_layout(tmp_path, [("a", 0x1010, 8), ("b", 0x1030, 4)])
    regs = code_regions(img)
    origins = [r.origin for r in regs]
    assert origins == ["symbol", "symbol", "gap", "gap", "gap"]
    assert [(r.start, r.end) for r in regs if r.origin == "symbol"] == [
        (0x1010, 0x1018), (0x1030, 0x1034)]
    assert [(r.start, r.end) for r in regs if r.origin == "gap"] == [
        (0x1000, 0x1010), (0x1018, 0x1030), (0x1034, 0x1040)]


def test_code_regions_zero_size_symbol_has_no_range(tmp_path):
    img = region_layout(tmp_path, [("z", 0x1010, 0)])
    regs = code_regions(img)
    assert all(r.origin == "gap" for r in regs)
    assert [(r.start, r.end) for r in regs] == [(0x1000, 0x1040)]


def test_code_regions_overlap_is_clipped_and_flagged(tmp_path):
    img = region_layout(tmp_path, [("a", 0x1000, 0x10), ("b", 0x1008, 0x10)])
    regs = [r for r in code_regions(img) if r.origin == "symbol"]
    assert [(r.start, r.end) for r in regs] == [(0x1000, 0x1010), (0x1010, 0x1018)]
    assert regs[1].note.startswith("clipped")


@st.composite
def layouts(draw):
    nsec = draw(st.integers(1, 3))
    secs = []
    base = 0x1000
    for i in range(nsec):
        size = draw(st.integers(1, 48))
        secs.append((f".c{i}", base, size))
        base += size + draw(st.integers(0, 32)) + 1
    syms = []
    for j in range(draw(st.integers(0, 5))):
        name, start, size = draw(st.sampled_from(secs)), 0, 0
        off = draw(st.integers(0, name[2] - 1))
        size = draw(st.integers(0, name[2]))
        syms.append((f"s{j}", name[1] + off, size))
    return secs, syms


@settings(max_examples=60, deadline=None)
@given(layouts())
def test_code_regions_partition_executable_bytes(tmp_path_factory, layout):
    secs, syms = layout
    b = FixtureBuilder("x64")
    for name, vaddr, size in secs:
        b.section(name, vaddr, "code", bytes(size))
    for name, vaddr, size in syms:
        b.symbol(name, vaddr, size)
    b.entry_at(secs[0][1])
    img = b.build(tmp_path_factory.mktemp("layout"))
    regs = code_regions(img)

    # oracle: executable byte set, computed directly from the sections
    exec_bytes = set()
    for name, vaddr, size in secs:
        exec_bytes.update(range(vaddr, vaddr + size))
    covered: list[int] = []
    for r in regs:
        assert r.start < r.end
        covered.extend(range(r.start, r.end))
    assert len(covered) == len(set(covered)), "regions overlap"
    assert set(covered) == exec_bytes, "regions do not tile executable bytes"
    # symbol regions precede gap regions and each group is address sorted
    kinds = [r.origin for r in regs]
    assert kinds == sorted(kinds, key=lambda k: 0 if k == "symbol" else 1)
    for group in ("symbol", "gap"):
        starts = [r.start for r in regs if r.origin == group]
        assert starts == sorted(starts)


def test_symbol_seeds_sorted_unique_include_entry(tmp_path):
    img = region_layout(tmp_path, [("a", 0x1010, 8), ("dup", 0x1010, 4),
                                   ("b", 0x1030, 4)])
    seeds = symbol_seeds(img)
    assert seeds == [0x1000, 0x1010, 0x1030]
