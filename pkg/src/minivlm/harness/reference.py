"""Reference cost figures, one entry per table cell.

Every value carries a citation string naming its table, row and column so
tolerance audits can grep for them. Units: params in millions, FLOPs in
billions (multiply-accumulates).
"""
from __future__ import annotations

from dataclasses import dataclass

REFERENCE_VERSION = "1"


@dataclass(frozen=True)
class RefCell:
    table: str
    row: str
    column: str
    value: float

    @property
    def citation(self) -> str:
        return f"{self.table} | {self.row} | {self.column}"


def _cells(table: str, rows: dict[str, dict[str, float]]) -> dict[tuple[str, str], RefCell]:
    return {(r, c): RefCell(table, r, c, v) for r, cols in rows.items() for c, v in cols.items()}


TABLE1 = _cells("Table 1", {
    "grid-r50": {"params_m": 23.5, "flops_b": 37.8},
    "grid-x101": {"params_m": 86.9, "flops_b": 161.2},
    "r101-f": {"params_m": 63.8, "flops_b": 767.0},
    "tee-0": {"params_m": 7.5, "flops_b": 4.4},
})

TABLE2 = _cells("Table 2", {
    "bert-base": {"params_m": 134.3, "flops_b": 8.2},
    "bert-8": {"params_m": 106.0, "flops_b": 5.8},
    "tinybert-6": {"params_m": 91.8, "flops_b": 4.6},
    "bert-4": {"params_m": 77.6, "flops_b": 3.3},
    "minilm": {"params_m": 45.7, "flops_b": 2.3},
    "tinybert-4": {"params_m": 24.3, "flops_b": 0.8},
})

TABLE3 = _cells("Table 3", {
    "r101-f": {"backbone": 27.6, "rpn": 4.7, "box_head": 31.4, "total": 63.8},
    "tee-0": {"backbone": 3.8, "rpn": 1e-3, "box_head": 3.7, "total": 7.5},
})

TABLE4 = _cells("Table 4", {
    "r101-f": {"backbone": 67.1, "rpn": 9.1, "box_head": 690.8, "total": 767.0},
    "tee-0": {"backbone": 3.3, "rpn": 0.03, "box_head": 1.1, "total": 4.4},
})

TABLE8 = _cells("Table 8", {
    "tee-0": {"params_m": 7.5, "flops_b": 4.4},
    "tee-1": {"params_m": 10.6, "flops_b": 9.6},
    "tee-2": {"params_m": 12.4, "flops_b": 17.6},
    "tee-3": {"params_m": 17.0, "flops_b": 23.3},
})

# Ratios quoted alongside the tables.
RATIOS = {
    "tee0_r101_params": RefCell("Table 1", "tee-0 / r101-f", "params ratio", 0.118),
    "tee0_r101_flops": RefCell("Table 1", "tee-0 / r101-f", "FLOPs ratio", 0.01),
    "minilm_bertbase_params": RefCell("Table 2", "minilm / bert-base", "params ratio", 0.34),
}

TABLES = {"table1": TABLE1, "table2": TABLE2, "table3": TABLE3, "table4": TABLE4, "table8": TABLE8}

# Relative tolerances per graded cell family.
TOLERANCES = {
    "table2_params": 0.03,
    "table2_flops": 0.15,
    "tee0_total": 0.10,
    "r101_total": 0.25,
    "component": 0.25,
    "table8_params": 0.10,
    "tee0_r101_params_ratio": (0.10, 0.14),
    "tee0_r101_flops_ratio_max": 0.02,
    "minilm_bertbase_params_ratio": (0.31, 0.37),
    "approx_equal": (0.8, 1.25),
    "much_greater": 10.0,
}
