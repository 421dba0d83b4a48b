"""Strategy flags, named tool profiles, and config-file handling.

Every toggle the pipeline consults lives in one flat StrategyConfig.
Flags are addressed by dotted names (`sweep.policy`, `cfg.jt_strategy`)
in config files, on the command line, and in result-file headers, so a
result is reproducible from its header alone.

A named profile expands to the flag set of the tool it models.  The
expansion is data, not code: PROFILES maps each name to the full flag
dictionary, and tests assert the table is total.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

SWEEP_POLICIES = ("skip_byte", "psi_repair", "exclude_region")
MAIN_METHODS = ("none", "arg_propagation", "byte_pattern")
ALIGNMENTS = ("machine", "xref_exception", "none")
STRING_PREFERENCES = ("none", "string", "pointer")
JT_STRATEGIES = ("none", "pattern_radare2", "slice_dyninst", "path_ghidra")
ICALL_SCOPES = ("none", "block", "function")
TAILCALL_RULESETS = ("none", "dyninst", "ghidra", "radare2", "angr")
NONRET_MODES = ("none", "assume_fallthrough", "worklist_propagate",
                "depth_first", "all_paths", "fallthrough_evidence")


@dataclass(frozen=True)
class StrategyConfig:
    """One flag per algorithm or heuristic the pipeline can enable.

    Defaults describe plain recursive descent with everything optional
    switched off; named profiles override from there.
    """

    profile: str = "custom"

    # Linear sweep.  policy picks what happens at an undecodable byte;
    # it is consulted only when recursive descent is off.
    sweep_policy: str = "skip_byte"

    # Recursive descent and its coverage heuristics.
    recursive_enabled: bool = True
    recursive_prologue_match: bool = False
    recursive_gap_scan: bool = False
    recursive_xref_seed: bool = False

    # Function entry discovery.
    funcid_main_method: str = "none"
    funcid_eh_frame: bool = False
    funcid_symbol_entries: bool = True
    funcid_call_target_entries: bool = True
    funcid_indirect_call_entries: bool = False
    funcid_scan_begin_entries: bool = False

    # Cross reference discovery over data.
    symbolize_enabled: bool = False
    symbolize_alignment: str = "machine"
    symbolize_code_targets_entry_only: bool = False
    symbolize_magic_values: bool = False
    symbolize_region_margin: int = 0
    symbolize_min_table_size: int = 1
    symbolize_string_preference: str = "none"
    symbolize_sliding_walk: bool = False
    symbolize_drop_float_entries: bool = False
    symbolize_scan_code_gaps: bool = False
    symbolize_drop_midfunction_entries: bool = False
    symbolize_table_split_distance: int = 0

    # Control flow: jump tables, indirect calls, tail calls, non-return.
    cfg_jt_strategy: str = "none"
    cfg_jt_bound_threshold: int = 0
    cfg_slice_assign_limit: int = 0
    cfg_slice_block_levels: int = 0
    cfg_indirect_call_prop: str = "none"
    cfg_tailcall_rules: str = "none"
    cfg_tailcall_distance: int = 0x4000
    cfg_nonret_mode: str = "none"
    cfg_nonret_seeds: bool = True

    def get(self, key: str):
        return getattr(self, _field_for(key))

    def with_overrides(self, overrides: dict[str, object]) -> StrategyConfig:
        """Return a copy with dotted-key overrides applied and validated."""
        changes = {}
        for key, value in overrides.items():
            changes[_field_for(key)] = _check_value(key, value)
        out = replace(self, **changes)
        if changes and out.profile in PROFILES:
            out = replace(out, profile=out.profile + "+")
        return out

    def items(self) -> list[tuple[str, object]]:
        """All flags as (dotted key, value), in declaration order."""
        return [(key, getattr(self, name)) for key, name in _KEY_TO_FIELD.items()]


# Validators: dotted key -> allowed enum tuple, or a type marker.
_CHOICES = {
    "sweep.policy": SWEEP_POLICIES,
    "funcid.main_method": MAIN_METHODS,
    "symbolize.alignment": ALIGNMENTS,
    "symbolize.string_preference": STRING_PREFERENCES,
    "cfg.jt_strategy": JT_STRATEGIES,
    "cfg.indirect_call_prop": ICALL_SCOPES,
    "cfg.tailcall_rules": TAILCALL_RULESETS,
    "cfg.nonret_mode": NONRET_MODES,
}

_KEY_TO_FIELD = {
    f.name.replace("_", ".", 1): f.name
    for f in fields(StrategyConfig)
    if f.name != "profile"
}


def _field_for(key: str) -> str:
    try:
        return _KEY_TO_FIELD[key]
    except KeyError:
        raise ConfigError(f"unknown flag {key!r}") from None


def _check_value(key: str, value: object):
    kind = StrategyConfig.__dataclass_fields__[_field_for(key)].type
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects on/off, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigError(f"{key} expects a non-negative integer, got {value!r}")
        return value
    allowed = _CHOICES[key]
    if value not in allowed:
        raise ConfigError(f"{key} must be one of {', '.join(allowed)}; got {value!r}")
    return value


def parse_value(key: str, text: str):
    """Parse the textual form used in config files and --set options."""
    kind = StrategyConfig.__dataclass_fields__[_field_for(key)].type
    text = text.strip()
    if kind == "bool":
        low = text.lower()
        if low in ("on", "true", "1", "yes"):
            return True
        if low in ("off", "false", "0", "no"):
            return False
        raise ConfigError(f"{key} expects on/off, got {text!r}")
    if kind == "int":
        try:
            return int(text, 0)
        except ValueError:
            raise ConfigError(f"{key} expects an integer, got {text!r}") from None
    return _check_value(key, text)


def format_value(value: object) -> str:
    """Inverse of parse_value, used when echoing flags into headers."""
    if isinstance(value, bool):
        return "on" if value else "off"
    return str(value)


def resolve(profile: str | None = None,
            file_overrides: dict[str, object] | None = None,
            set_overrides: dict[str, object] | None = None) -> StrategyConfig:
    """Expand a profile, then apply config-file keys, then --set keys.

    Later layers win.  A missing profile starts from plain defaults.
    """
    if profile is None:
        base = StrategyConfig()
    else:
        base = from_profile(profile)
    if file_overrides:
        base = base.with_overrides(file_overrides)
    if set_overrides:
        base = base.with_overrides(set_overrides)
    return base


def from_profile(name: str) -> StrategyConfig:
    try:
        flags = PROFILES[name]
    except KeyError:
        known = ", ".join(PROFILES)
        raise ConfigError(f"unknown profile {name!r} (profiles: {known})") from None
    cfg = StrategyConfig().with_overrides(flags)
    return replace(cfg, profile=name)


def parse_config_file(text: str) -> tuple[str | None, dict[str, object]]:
    """Parse `key = value` lines.  Returns (profile or None, overrides).

    `#` starts a comment, blank lines are skipped, `profile` is the one
    key that is not a flag.
    """
    profile = None
    overrides: dict[str, object] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "profile":
            profile = val
            continue
        try:
            overrides[key] = parse_value(key, val)
        except ConfigError as err:
            raise ConfigError(f"line {ln}: {err}") from None
    return profile, overrides


def _linear(policy: str) -> dict[str, object]:
    """Linear sweep tool: no descent, no entry discovery, no CFG work."""
    return {
        "sweep.policy": policy,
        "recursive.enabled": False,
        "funcid.symbol_entries": False,
        "funcid.call_target_entries": False,
        "cfg.nonret_seeds": False,
    }


def _descent(**flags: object) -> dict[str, object]:
    """Recursive descent tool baseline: prologue matching and the shared
    non-returning seed list on, everything else per keyword."""
    base: dict[str, object] = {"recursive.prologue_match": True}
    base.update(flags)
    return base


PROFILES: dict[str, dict[str, object]] = {
    "objdump": _linear("skip_byte"),
    "psi": _linear("psi_repair"),
    "uroboros": dict(_linear("exclude_region"),
                     **{"symbolize.enabled": True,
                        "symbolize.alignment": "machine"}),
    "dyninst": _descent(**{
        "funcid.main_method": "byte_pattern",
        "cfg.jt_strategy": "slice_dyninst",
        "cfg.slice_assign_limit": 50,
        "cfg.tailcall_rules": "dyninst",
        "cfg.nonret_mode": "depth_first",
    }),
    "ghidra": _descent(**{
        "recursive.xref_seed": True,
        "funcid.eh_frame": True,
        "funcid.indirect_call_entries": True,
        "symbolize.enabled": True,
        "symbolize.alignment": "xref_exception",
        "symbolize.code_targets_entry_only": True,
        "symbolize.magic_values": True,
        "symbolize.region_margin": 1024,
        "symbolize.min_table_size": 2,
        "symbolize.string_preference": "string",
        "symbolize.scan_code_gaps": True,
        "symbolize.drop_midfunction_entries": True,
        "symbolize.table_split_distance": 0xFFFFF,
        "cfg.jt_strategy": "path_ghidra",
        "cfg.jt_bound_threshold": 1024,
        "cfg.indirect_call_prop": "function",
        "cfg.tailcall_rules": "ghidra",
        "cfg.nonret_mode": "fallthrough_evidence",
    }),
    "angr": _descent(**{
        "recursive.gap_scan": True,
        "funcid.main_method": "arg_propagation",
        "funcid.indirect_call_entries": True,
        "funcid.scan_begin_entries": True,
        "symbolize.enabled": True,
        "symbolize.alignment": "none",
        "symbolize.region_margin": 1024,
        "symbolize.string_preference": "pointer",
        "symbolize.sliding_walk": True,
        "symbolize.drop_float_entries": True,
        "symbolize.scan_code_gaps": True,
        "cfg.jt_strategy": "slice_dyninst",
        "cfg.jt_bound_threshold": 100000,
        "cfg.slice_block_levels": 3,
        "cfg.indirect_call_prop": "block",
        "cfg.tailcall_rules": "angr",
        "cfg.nonret_mode": "assume_fallthrough",
    }),
    "bap": _descent(**{
        "funcid.main_method": "arg_propagation",
        "cfg.nonret_mode": "all_paths",
    }),
    "radare2": _descent(**{
        "recursive.xref_seed": True,
        "funcid.main_method": "byte_pattern",
        "cfg.jt_strategy": "pattern_radare2",
        "cfg.jt_bound_threshold": 512,
        "cfg.tailcall_rules": "radare2",
        "cfg.nonret_mode": "worklist_propagate",
    }),
    "pure": {
        "cfg.nonret_mode": "worklist_propagate",
    },
}

# Single-heuristic ablations of a parent profile.
PROFILES["ghidra-ne"] = dict(PROFILES["ghidra"], **{"funcid.eh_frame": False})
PROFILES["angr-ns"] = dict(PROFILES["angr"], **{"recursive.gap_scan": False})

# What each flag does, one line apiece; `strategies list` prints these.
FLAG_HELP = {
    "sweep.policy": "on an undecodable byte: skip_byte restarts one byte on, "
                    "psi_repair rewinds and patches the error region, "
                    "exclude_region drops bytes up to the next anchor",
    "recursive.enabled": "follow control flow from seeds instead of sweeping",
    "recursive.prologue_match": "seed descent at code matching known function "
                                "prologue byte patterns",
    "recursive.gap_scan": "linearly sweep leftover gaps and keep what decodes",
    "recursive.xref_seed": "seed descent at addresses referenced from "
                           "recovered code or data, with rollback on error",
    "funcid.main_method": "locate main from the entry stub: arg_propagation "
                          "traces the argument register, byte_pattern matches "
                          "the call-site immediate",
    "funcid.eh_frame": "harvest function entries from call frame information",
    "funcid.symbol_entries": "trust function symbols as entries",
    "funcid.call_target_entries": "direct call targets become entries",
    "funcid.indirect_call_entries": "resolved indirect call targets become "
                                    "entries",
    "funcid.scan_begin_entries": "the first decoded address of a scanned gap "
                                 "becomes an entry",
    "symbolize.enabled": "classify constants in data as addresses",
    "symbolize.alignment": "which data offsets are candidates: machine keeps "
                           "word-aligned ones, xref_exception also admits "
                           "unaligned ones that something references, none "
                           "admits every offset",
    "symbolize.code_targets_entry_only": "a candidate into code must land on "
                                         "a function entry",
    "symbolize.magic_values": "reject common sentinel constants (small ints, "
                              "all-ones masks)",
    "symbolize.region_margin": "accept candidates pointing up to this many "
                               "bytes outside mapped regions",
    "symbolize.min_table_size": "address tables shorter than this are "
                                "rejected",
    "symbolize.string_preference": "when bytes parse as both text and a "
                                   "pointer, which wins",
    "symbolize.sliding_walk": "scan tables by sliding one byte at a time "
                              "instead of stride jumps",
    "symbolize.drop_float_entries": "drop candidates whose bytes flow into "
                                    "float operations",
    "symbolize.scan_code_gaps": "also scan unclaimed code-section gaps for "
                                "tables and strings",
    "symbolize.drop_midfunction_entries": "drop table entries that land "
                                          "inside a known function body",
    "symbolize.table_split_distance": "split a table where adjacent targets "
                                      "are further apart than this",
    "cfg.jt_strategy": "jump table resolution: pattern_radare2 matches the "
                       "compare-plus-indexed-jump shape, slice_dyninst "
                       "backward-slices the index, path_ghidra walks constant "
                       "values over paths to the jump",
    "cfg.jt_bound_threshold": "reject tables with more entries than this "
                              "(0 = unlimited)",
    "cfg.slice_assign_limit": "give up slicing past this many assignments "
                              "(0 = unlimited)",
    "cfg.slice_block_levels": "slice at most this many blocks back "
                              "(0 = unlimited)",
    "cfg.indirect_call_prop": "resolve indirect calls by constant "
                              "propagation over one block or the function",
    "cfg.tailcall_rules": "which tool's jump-is-really-a-call rule set to "
                          "apply",
    "cfg.tailcall_distance": "radare2 rule set: jumps further than this are "
                             "tail calls",
    "cfg.nonret_mode": "how calls to non-returning functions cut fall-through"
                       ": assume_fallthrough never cuts, worklist_propagate "
                       "and depth_first and all_paths prove it over the call "
                       "graph, fallthrough_evidence cuts unless something "
                       "jumps past the call",
    "cfg.nonret_seeds": "start from the shared list of known non-returning "
                        "library names",
}
