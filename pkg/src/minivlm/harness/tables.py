"""Cost tables computed by the cost model and graded against the reference figures."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from ..configs import DETECTOR_PRESETS, TRANSFORMER_PRESETS, get_preset
from ..cost_model import GRID_REFERENCE, R101_F, CostReport, count_arch
from .reference import RATIOS, TABLES, TOLERANCES, RefCell

TABLE2_ROWS = ("bert-base", "bert-8", "tinybert-6", "bert-4", "minilm", "tinybert-4")
TEE_ROWS = ("tee-0", "tee-1", "tee-2", "tee-3")
TABLE2_INPUT = (50, 35)
TARGETS = tuple(TABLES)


@dataclass
class Cell:
    table: str
    row: str
    column: str
    computed: float
    reference: float | None
    check: str  # human-readable rule
    passed: bool | None  # None = informational, not graded

    @property
    def delta(self) -> float | None:
        if self.reference in (None, 0):
            return None
        return self.computed / self.reference - 1.0

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "info"}[self.passed]
        ref = "-" if self.reference is None else f"{self.reference:g}"
        d = "" if self.delta is None else f" ({self.delta:+.1%})"
        return f"[{status}] {self.table} | {self.row} | {self.column}: computed {self.computed:.4g}, ref {ref}{d}; {self.check}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta"] = self.delta
        return d


def reference_view(report: CostReport) -> dict[str, tuple[float, float]]:
    """Fold a detector report into the reference component inventory, in (M params, B FLOPs).

    The BiFPN counts toward the backbone; the attribute head is outside the
    reference totals.
    """
    c = {name: (p, f) for name, p, f in report.components}
    bb = [c["backbone"]] + ([c["bifpn"]] if "bifpn" in c else [])
    out = {"backbone": (sum(p for p, _ in bb), sum(f for _, f in bb)), "rpn": c["rpn"], "box_head": c["box_head"]}
    out["total"] = (sum(p for p, _ in out.values()), sum(f for _, f in out.values()))
    return {k: (p / 1e6, f / 1e9) for k, (p, f) in out.items()}


def _within(computed: float, ref: RefCell, tol: float, table: str, row: str, column: str) -> Cell:
    ok = abs(computed / ref.value - 1.0) <= tol
    return Cell(table, row, column, computed, ref.value, f"within +-{tol:.0%}", ok)


def _ordering(table: str, column: str, names, values, ascending: bool = True) -> Cell:
    pairs = list(zip(values, values[1:]))
    ok = all(a < b for a, b in pairs) if ascending else all(a > b for a, b in pairs)
    sign = " < " if ascending else " > "
    return Cell(table, sign.join(names), column, float(len(values)), None,
                "strict ordering " + sign.join(f"{v:.3g}" for v in values), ok)


def detector_views() -> dict[str, dict[str, tuple[float, float]]]:
    views = {n: reference_view(count_arch(DETECTOR_PRESETS[n])) for n in TEE_ROWS}
    views["r101-f"] = reference_view(count_arch(R101_F))
    return views


def table1() -> list[Cell]:
    ref, v = TABLES["table1"], detector_views()
    cells = [
        _within(v["tee-0"]["total"][0], ref[("tee-0", "params_m")], TOLERANCES["tee0_total"], "Table 1", "tee-0", "params_m"),
        _within(v["tee-0"]["total"][1], ref[("tee-0", "flops_b")], TOLERANCES["tee0_total"], "Table 1", "tee-0", "flops_b"),
        _within(v["r101-f"]["total"][0], ref[("r101-f", "params_m")], TOLERANCES["r101_total"], "Table 1", "r101-f", "params_m"),
        _within(v["r101-f"]["total"][1], ref[("r101-f", "flops_b")], TOLERANCES["r101_total"], "Table 1", "r101-f", "flops_b"),
    ]
    for name, (p, f) in GRID_REFERENCE.items():
        cells.append(Cell("Table 1", name, "params_m", p / 1e6, ref[(name, "params_m")].value, "carried reference only", None))
        cells.append(Cell("Table 1", name, "flops_b", f / 1e9, ref[(name, "flops_b")].value, "carried reference only", None))
    pr = v["tee-0"]["total"][0] / v["r101-f"]["total"][0]
    fr = v["tee-0"]["total"][1] / v["r101-f"]["total"][1]
    lo, hi = TOLERANCES["tee0_r101_params_ratio"]
    cells.append(Cell("Table 1", "tee-0 / r101-f", "params ratio", pr, RATIOS["tee0_r101_params"].value,
                      f"in [{lo:.0%}, {hi:.0%}]", lo <= pr <= hi))
    fmax = TOLERANCES["tee0_r101_flops_ratio_max"]
    cells.append(Cell("Table 1", "tee-0 / r101-f", "FLOPs ratio", fr, RATIOS["tee0_r101_flops"].value,
                      f"<= {fmax:.0%}", fr <= fmax))
    return cells


def table2() -> list[Cell]:
    ref = TABLES["table2"]
    cells = []
    reports = {n: count_arch(TRANSFORMER_PRESETS[n], TABLE2_INPUT) for n in TABLE2_ROWS}
    for n, r in reports.items():
        cells.append(_within(r.params / 1e6, ref[(n, "params_m")], TOLERANCES["table2_params"], "Table 2", n, "params_m"))
        cells.append(_within(r.flops / 1e9, ref[(n, "flops_b")], TOLERANCES["table2_flops"], "Table 2", n, "flops_b"))
    ratio = reports["minilm"].params / reports["bert-base"].params
    lo, hi = TOLERANCES["minilm_bertbase_params_ratio"]
    cells.append(Cell("Table 2", "minilm / bert-base", "params ratio", ratio, RATIOS["minilm_bertbase_params"].value,
                      f"in [{lo:.0%}, {hi:.0%}]", lo <= ratio <= hi))
    return cells


def _component_table(table_id: str, col: int) -> list[Cell]:
    ref, v = TABLES[table_id.lower().replace(" ", "")], detector_views()
    name = "Table 3" if col == 0 else "Table 4"
    cells = []
    for row in ("tee-0", "r101-f"):
        tol_total = TOLERANCES["tee0_total"] if row == "tee-0" else TOLERANCES["r101_total"]
        for comp in ("backbone", "rpn", "box_head", "total"):
            tol = tol_total if comp == "total" else TOLERANCES["component"]
            cells.append(_within(v[row][comp][col], ref[(row, comp)], tol, name, row, comp))
        # the reference component ranking must be reproduced exactly
        comps = ("backbone", "rpn", "box_head")
        want = sorted(comps, key=lambda c: -ref[(row, c)].value)
        got = sorted(comps, key=lambda c: -v[row][c][col])
        cells.append(Cell(name, row, "component ranking", float(want == got), None,
                          f"expected {' > '.join(want)}, got {' > '.join(got)}", want == got))
    tee = v["tee-0"]
    ratio = tee["box_head"][col] / tee["rpn"][col]
    cells.append(Cell(name, "tee-0", "box_head / rpn", ratio, None,
                      f">= {TOLERANCES['much_greater']:g} (box head >> RPN)", ratio >= TOLERANCES["much_greater"]))
    if col == 0:
        lo, hi = TOLERANCES["approx_equal"]
        r = tee["backbone"][0] / tee["box_head"][0]
        cells.append(Cell(name, "tee-0", "backbone / box_head", r, None,
                          f"in [{lo}, {hi}] (backbone ~ box head)", lo <= r <= hi))
    return cells


def table3() -> list[Cell]:
    return _component_table("table3", 0)


def table4() -> list[Cell]:
    return _component_table("table4", 1)


def table8() -> list[Cell]:
    ref, v = TABLES["table8"], detector_views()
    cells = []
    for n in TEE_ROWS:
        cells.append(_within(v[n]["total"][0], ref[(n, "params_m")], TOLERANCES["table8_params"], "Table 8", n, "params_m"))
        cells.append(Cell("Table 8", n, "flops_b", v[n]["total"][1], ref[(n, "flops_b")].value,
                          "informational; resolution-dependent", None))
    cells.append(_ordering("Table 8", "params_m", TEE_ROWS, [v[n]["total"][0] for n in TEE_ROWS]))
    cells.append(_ordering("Table 8", "flops_b", TEE_ROWS, [v[n]["total"][1] for n in TEE_ROWS]))
    return cells


_BUILDERS = {"table1": table1, "table2": table2, "table3": table3, "table4": table4, "table8": table8}


def reproduce(target: str) -> list[Cell]:
    """Graded cells for one table id; raises ``ValueError`` listing valid ids otherwise."""
    if target not in _BUILDERS:
        raise ValueError(f"unknown target {target!r}; valid targets: {', '.join(TARGETS)}")
    return _BUILDERS[target]()


def all_passed(cells: list[Cell]) -> bool:
    return all(c.passed is not False for c in cells)


def run_cost_tables(out_dir: str | Path) -> list[Path]:
    """Write ``<table>.json`` and ``<table>.txt`` for every target; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in TARGETS:
        cells = reproduce(t)
        j, txt = out / f"{t}.json", out / f"{t}.txt"
        j.write_text(json.dumps([c.to_dict() for c in cells], indent=2, sort_keys=True) + "\n")
        txt.write_text("\n".join(c.line() for c in cells) + "\n")
        paths += [j, txt]
    return paths
