"""Reading and writing network data.

Two formats are supported:

* a MATPOWER case subset (``mpc.baseMVA``, ``mpc.bus``, ``mpc.branch``,
  ``mpc.gen``, ``mpc.gencost``), and
* the native JSON document, which also carries capacitors, flexible DGs,
  the daily load profile and the interface cost.

Files hold physical units (MW, MVAr, kV); r, x and b are per-unit on the
case base, as customary for published feeders. Networks are per-unit.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from decimal import Decimal, localcontext
from importlib import resources
from pathlib import Path

import jsonschema

from .network import (
    HOURS, Branch, Bus, BusKind, Generator, Network, physical_to_pu, pu_to_physical,
)

SCHEMA_VERSION = "1.0"
DEFAULT_EXCHANGE_LIMIT_PU = 10.0


class CaseFormatError(ValueError):
    """Malformed case data; the message carries the location."""


# ---------------------------------------------------------------- MATPOWER

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*", re.MULTILINE)
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?[Ii]nf")
_KNOWN = {"version", "baseMVA", "bus", "branch", "gen", "gencost"}


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _strip_comments(text: str) -> str:
    # keep offsets stable so diagnostics point into the original text
    return re.sub(r"%[^\n]*", lambda m: " " * len(m.group()), text)


def _parse_matrix(text: str, start: int, name: str) -> tuple[list[list[float]], list[int]]:
    end = text.find("]", start)
    if end < 0:
        line, col = _line_col(text, start)
        raise CaseFormatError(f"line {line}, col {col}: unterminated matrix mpc.{name}")
    rows, lines = [], []
    pos = start + 1
    for chunk in re.split(r"[;\n]", text[start + 1:end]):
        stripped = chunk.strip()
        if stripped:
            values = []
            offset = pos
            for token in re.finditer(r"[^\s,]+", chunk):
                if not _NUMBER.fullmatch(token.group()):
                    line, col = _line_col(text, offset + token.start())
                    raise CaseFormatError(
                        f"line {line}, col {col}: bad number {token.group()!r} in mpc.{name}"
                    )
                values.append(float(token.group()))
            rows.append(values)
            lines.append(_line_col(text, pos)[0])
        pos += len(chunk) + 1
    return rows, lines


def _read_sections(text: str) -> dict[str, tuple[object, list[int]]]:
    clean = _strip_comments(text)
    sections: dict[str, tuple[object, list[int]]] = {}
    for match in _ASSIGN.finditer(clean):
        name = match.group(1)
        pos = match.end()
        if name not in _KNOWN:
            warnings.warn(f"ignoring unsupported field mpc.{name}", stacklevel=3)
            continue
        if clean[pos:pos + 1] == "[":
            sections[name] = _parse_matrix(clean, pos, name)
        else:
            stop = clean.find(";", pos)
            raw = clean[pos:stop if stop >= 0 else None].strip()
            if name != "version":
                if not _NUMBER.fullmatch(raw):
                    line, col = _line_col(clean, pos)
                    raise CaseFormatError(f"line {line}, col {col}: bad scalar mpc.{name} = {raw!r}")
                sections[name] = (float(raw), [_line_col(clean, pos)[0]])
    return sections


def _require_width(rows, lines, width: int, name: str) -> None:
    for row, line in zip(rows, lines):
        if len(row) < width:
            raise CaseFormatError(
                f"line {line}: mpc.{name} row has {len(row)} columns, need at least {width}"
            )


def parse_matpower(text: str) -> Network:
    """Parse the documented MATPOWER subset into a per-unit network."""
    sections = _read_sections(text)
    for required in ("baseMVA", "bus", "branch"):
        if required not in sections:
            raise CaseFormatError(f"missing section mpc.{required}")
    base = float(sections["baseMVA"][0])
    if not base > 0:
        raise CaseFormatError("mpc.baseMVA must be positive")

    bus_rows, bus_lines = sections["bus"]
    _require_width(bus_rows, bus_lines, 13, "bus")
    buses, seen = [], {}
    base_kv = None
    for row, line in zip(bus_rows, bus_lines):
        bid = int(row[0])
        if bid in seen:
            raise CaseFormatError(f"line {line}: duplicate bus id {bid} (first on line {seen[bid]})")
        seen[bid] = line
        kind = BusKind.SUBSTATION if int(row[1]) == 3 else BusKind.PQ
        if kind == BusKind.SUBSTATION:
            base_kv = row[9]
        buses.append(Bus(
            id=bid, kind=kind,
            p_load=physical_to_pu(row[2], base), q_load=physical_to_pu(row[3], base),
            v_min=row[12], v_max=row[11],
        ))
    if not any(b.is_substation for b in buses):
        raise CaseFormatError("no type-3 (reference) bus in mpc.bus")

    br_rows, br_lines = sections["branch"]
    _require_width(br_rows, br_lines, 6, "branch")
    branches = []
    for row, line in zip(br_rows, br_lines):
        if len(row) > 10 and row[10] == 0:
            continue
        for end in (row[0], row[1]):
            if int(end) not in seen:
                raise CaseFormatError(f"line {line}: branch refers to unknown bus {int(end)}")
        rate = physical_to_pu(row[5], base) if row[5] > 0 else math.inf
        branches.append(Branch(int(row[0]), int(row[1]), row[2], row[3], row[4],
                               s_max=rate, p_max=rate, q_max=rate))

    costs: list[float] = []
    if "gencost" in sections:
        rows, lines = sections["gencost"]
        for row, line in zip(rows, lines):
            if len(row) < 4 or int(row[0]) != 2:
                raise CaseFormatError(f"line {line}: only polynomial (model 2) gencost rows are supported")
            ncoef = int(row[3])
            coefs = row[4:4 + ncoef]
            if len(coefs) != ncoef:
                raise CaseFormatError(f"line {line}: gencost row declares {ncoef} coefficients")
            if any(c != 0.0 for c in coefs[:-2]):
                raise CaseFormatError(f"line {line}: nonlinear generator cost is not supported")
            costs.append(coefs[-2] if ncoef >= 2 else 0.0)

    root = next(b.id for b in buses if b.is_substation)
    generators, sub_cost = [], None
    if "gen" in sections:
        rows, lines = sections["gen"]
        _require_width(rows, lines, 10, "gen")
        for k, (row, line) in enumerate(zip(rows, lines)):
            if int(row[0]) not in seen:
                raise CaseFormatError(f"line {line}: generator at unknown bus {int(row[0])}")
            if row[7] <= 0:
                continue
            cost = costs[k] if k < len(costs) else 0.0
            gen = Generator(int(row[0]),
                            p_min=physical_to_pu(row[9], base), p_max=physical_to_pu(row[8], base),
                            q_min=physical_to_pu(row[4], base), q_max=physical_to_pu(row[3], base),
                            cost=cost)
            if gen.bus == root and sub_cost is None:
                sub_cost = cost
                generators.insert(0, gen)
            else:
                generators.append(gen)
    if sub_cost is None:
        lim = DEFAULT_EXCHANGE_LIMIT_PU
        generators.insert(0, Generator(root, -lim, lim, -lim, lim, 0.0))
        sub_cost = 0.0
    return Network(tuple(buses), tuple(branches), tuple(generators), base_mva=base,
                   base_kv=base_kv if base_kv else 12.66, substation_cost=sub_cost)


def emit_matpower(network: Network) -> str:
    """Write the MATPOWER subset (capacitors and profile are not representable)."""
    base = network.base_mva
    mw = lambda v: pu_to_physical(v, base)  # noqa: E731
    out = ["function mpc = case", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in network.buses:
        t = 3 if b.is_substation else 1
        out.append(f"\t{b.id}\t{t}\t{mw(b.p_load)!r}\t{mw(b.q_load)!r}\t0\t0\t1\t1\t0\t"
                   f"{network.base_kv!r}\t1\t{b.v_max!r}\t{b.v_min!r};")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for br in network.branches:
        rate = mw(br.s_max) if math.isfinite(br.s_max) else 0
        out.append(f"\t{br.from_bus}\t{br.to_bus}\t{br.r!r}\t{br.x!r}\t{br.b_shunt!r}\t"
                   f"{rate!r}\t0\t0\t0\t0\t1;")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    sub = network.substation_generator()
    for g in network.generators:
        out.append(f"\t{g.bus}\t0\t0\t{mw(g.q_max)!r}\t{mw(g.q_min)!r}\t1\t{base!r}\t1\t"
                   f"{mw(g.p_max)!r}\t{mw(g.p_min)!r};")
    out += ["];", "", "%% model startup shutdown n c1 c0", "mpc.gencost = ["]
    for k, g in enumerate(network.generators):
        cost = network.substation_cost if k == sub else g.cost
        out.append(f"\t2\t0\t0\t2\t{cost!r}\t0;")
    out.append("];")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- native JSON

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}
_NONNEG = {"type": "number", "minimum": 0}

NATIVE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "base_mva", "buses", "branches"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "base_kv": {"type": "number", "exclusiveMinimum": 0},
        "buses": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["id"], "additionalProperties": False,
            "properties": {
                "id": {"type": "integer"},
                "type": {"enum": ["substation", "pq"]},
                "pd_mw": _NUM, "qd_mvar": _NUM, "v_min": _NUM, "v_max": _NUM,
            },
        }},
        "branches": {"type": "array", "items": {
            "type": "object", "required": ["from", "to", "r", "x"], "additionalProperties": False,
            "properties": {
                "from": {"type": "integer"}, "to": {"type": "integer"},
                "r": _NUM, "x": _NUM, "b": _NUM,
                "s_max_mva": _OPT_NUM, "p_max_mw": _OPT_NUM, "q_max_mvar": _OPT_NUM,
            },
        }},
        "generators": {"type": "array", "items": {"$ref": "#/$defs/unit"}},
        "dgs": {"type": "array", "items": {"$ref": "#/$defs/unit"}},
        "capacitors": {"type": "array", "items": {
            "type": "object", "required": ["bus", "q_max_mvar"], "additionalProperties": False,
            "properties": {"bus": {"type": "integer"}, "q_max_mvar": _NONNEG},
        }},
        "profile": {"type": "array", "items": _NONNEG, "minItems": HOURS, "maxItems": HOURS},
        "costs": {"type": "object", "additionalProperties": False,
                  "properties": {"substation": _NUM}},
    },
    "$defs": {"unit": {
        "type": "object", "required": ["bus", "p_min_mw", "p_max_mw", "q_min_mvar", "q_max_mvar"],
        "additionalProperties": False,
        "properties": {
            "bus": {"type": "integer"}, "p_min_mw": _NUM, "p_max_mw": _NUM,
            "q_min_mvar": _NUM, "q_max_mvar": _NUM, "cost": _NUM,
        },
    }},
}


def _path(error: jsonschema.ValidationError) -> str:
    parts = ["$"]
    for p in error.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def _exact(value) -> Decimal:
    return value if isinstance(value, Decimal) else Decimal(value)


def _to_pu(value, base: float) -> float:
    """Physical document value to pu, divided in decimal and rounded once."""
    with localcontext() as ctx:
        ctx.prec = 60
        return float(_exact(value) / Decimal(base))


def _limit(value, base: float) -> float:
    return math.inf if value is None else _to_pu(value, base)


def _num(value, default: float = 0.0) -> float:
    return default if value is None else float(value)


def parse_native(text: str) -> Network:
    """Parse a native JSON case document."""
    try:
        # decimal numbers keep the physical values exact until division by the base
        doc = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"line {exc.lineno}, col {exc.colno}: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(NATIVE_SCHEMA).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise CaseFormatError("; ".join(f"{_path(e)}: {e.message}" for e in errors))

    base = float(doc["base_mva"])
    pu = lambda v: _to_pu(v, base)  # noqa: E731
    caps: dict[int, float] = {}
    ids = [b["id"] for b in doc["buses"]]
    known = set(ids)
    if len(known) != len(ids):
        raise CaseFormatError("$.buses: duplicate bus ids")

    def check_bus(bus: int, where: str) -> None:
        if bus not in known:
            raise CaseFormatError(f"{where}: unknown bus {bus}")

    for k, cap in enumerate(doc.get("capacitors", [])):
        check_bus(cap["bus"], f"$.capacitors[{k}].bus")
        caps[cap["bus"]] = caps.get(cap["bus"], 0.0) + pu(cap["q_max_mvar"])

    buses = tuple(
        Bus(id=b["id"], kind=BusKind(b.get("type", "pq")),
            p_load=pu(b.get("pd_mw", 0)), q_load=pu(b.get("qd_mvar", 0)),
            v_min=_num(b.get("v_min"), 0.9), v_max=_num(b.get("v_max"), 1.1),
            cap_q_max=caps.get(b["id"], 0.0))
        for b in doc["buses"]
    )
    subs = [b.id for b in buses if b.is_substation]
    if len(subs) != 1:
        raise CaseFormatError(f"$.buses: need exactly one substation, found {len(subs)}")

    branches = []
    for k, br in enumerate(doc["branches"]):
        check_bus(br["from"], f"$.branches[{k}].from")
        check_bus(br["to"], f"$.branches[{k}].to")
        s_max = _limit(br.get("s_max_mva"), base)
        branches.append(Branch(
            br["from"], br["to"], float(br["r"]), float(br["x"]), _num(br.get("b")),
            s_max=s_max,
            p_max=_limit(br["p_max_mw"], base) if "p_max_mw" in br else s_max,
            q_max=_limit(br["q_max_mvar"], base) if "q_max_mvar" in br else s_max,
        ))

    sub_cost = _num(doc.get("costs", {}).get("substation"))
    generators = []
    for group in ("generators", "dgs"):
        for k, g in enumerate(doc.get(group, [])):
            check_bus(g["bus"], f"$.{group}[{k}].bus")
            at_root = g["bus"] == subs[0]
            if group == "dgs" and at_root:
                raise CaseFormatError(f"$.dgs[{k}].bus: DG placed on the substation bus")
            generators.append(Generator(
                g["bus"],
                p_min=pu(g["p_min_mw"]), p_max=pu(g["p_max_mw"]),
                q_min=pu(g["q_min_mvar"]), q_max=pu(g["q_max_mvar"]),
                cost=_num(g.get("cost"), sub_cost if at_root else 0.0),
            ))
    if not any(g.bus == subs[0] for g in generators):
        lim = DEFAULT_EXCHANGE_LIMIT_PU
        generators.insert(0, Generator(subs[0], -lim, lim, -lim, lim, sub_cost))

    return Network(
        buses, tuple(branches), tuple(generators), base_mva=base,
        base_kv=_num(doc.get("base_kv"), 12.66), substation_cost=sub_cost,
        load_profile=tuple(float(v) for v in doc.get("profile", (1.0,) * HOURS)),
    )


_RAW = "\x00raw:"


def _physical(value: float, base: float):
    """Shortest decimal text for ``value * base`` that :func:`_to_pu` maps
    back to exactly ``value``; ``None`` for infinite limits."""
    if not math.isfinite(value):
        return None
    with localcontext() as ctx:
        ctx.prec = 800
        exact = Decimal(value) * Decimal(base)
    plain = repr(float(exact))
    if _to_pu(Decimal(plain), base) == value:
        return float(plain)
    for digits in range(1, 40):
        text = format(exact, f".{digits}g")
        if _to_pu(Decimal(text), base) == value:
            return _RAW + text
    return _RAW + format(exact, "f")


def emit_native(network: Network) -> str:
    """Serialize to the native JSON document; :func:`parse_native` inverts it
    field for field."""
    base = network.base_mva
    ph = lambda v: _physical(v, base)  # noqa: E731
    root = network.substation.id
    doc = {
        "schema_version": SCHEMA_VERSION,
        "base_mva": base,
        "base_kv": network.base_kv,
        "buses": [
            {"id": b.id, "type": b.kind.value, "pd_mw": ph(b.p_load), "qd_mvar": ph(b.q_load),
             "v_min": b.v_min, "v_max": b.v_max}
            for b in network.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b_shunt,
             "s_max_mva": ph(br.s_max), "p_max_mw": ph(br.p_max), "q_max_mvar": ph(br.q_max)}
            for br in network.branches
        ],
        "generators": [], "dgs": [],
        "capacitors": [
            {"bus": b.id, "q_max_mvar": ph(b.cap_q_max)} for b in network.buses if b.cap_q_max > 0
        ],
        "costs": {"substation": network.substation_cost},
    }
    for g in network.generators:
        unit = {"bus": g.bus, "p_min_mw": ph(g.p_min), "p_max_mw": ph(g.p_max),
                "q_min_mvar": ph(g.q_min), "q_max_mvar": ph(g.q_max), "cost": g.cost}
        doc["generators" if g.bus == root else "dgs"].append(unit)
    if any(v != 1.0 for v in network.load_profile):
        doc["profile"] = list(network.load_profile)
    text = json.dumps(doc, indent=1)
    # numbers that need more digits than a float repr go in verbatim
    return re.sub(r'"\\u0000raw:([^"]+)"', r"\1", text)


def load_case(source: str | Path) -> Network:
    """Load a case from a path (``.json`` native, anything else MATPOWER) or
    a bundled case name such as ``"case33bw"``."""
    path = Path(source)
    if not path.exists():
        bundled = resources.files("flexdom") / "data" / f"{source}.json"
        if not bundled.is_file():
            raise FileNotFoundError(f"no case file or bundled case named {source!r}")
        return parse_native(bundled.read_text(encoding="utf-8"))
    text = path.read_text(encoding="utf-8")
    return parse_native(text) if path.suffix.lower() == ".json" else parse_matpower(text)
