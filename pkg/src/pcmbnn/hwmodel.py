"""Table-driven core power / performance / area calculator.

Budgets carry per-component inputs (clock, ops per clock for each
read-timing mode, per-weight read power, per-mode digital power, component
areas); the calculator derives throughput, total power, power efficiency
(GOPS/W) and total efficiency (GOPS/W/mm^2), plus head-to-head ratios
between two budgets. Keeping the derived rows out of the budget files
makes every reported figure a genuine recomputation from its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

MODES = (8, 4, 2)


class BudgetError(ValueError):
    pass


@dataclass
class ComponentBudget:
    label: str
    clock_hz: float
    ops_per_clk: dict[int, float]
    read_power_per_weight_w: float
    weights_per_read: int
    digital_power_w: dict[int, float]
    areas_mm2: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        numbers = [self.clock_hz, self.read_power_per_weight_w, self.weights_per_read]
        numbers += list(self.ops_per_clk.values())
        numbers += list(self.digital_power_w.values())
        numbers += list(self.areas_mm2.values())
        if any(v < 0 for v in numbers):
            raise BudgetError("budget entries must be nonnegative")

    @property
    def total_read_power_w(self) -> float:
        return self.read_power_per_weight_w * self.weights_per_read

    @property
    def total_area_mm2(self) -> float:
        return sum(self.areas_mm2.values())

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "clock_hz": self.clock_hz,
            "ops_per_clk": {str(k): v for k, v in self.ops_per_clk.items()},
            "read_power_per_weight_w": self.read_power_per_weight_w,
            "weights_per_read": self.weights_per_read,
            "digital_power_w": {str(k): v for k, v in self.digital_power_w.items()},
            "areas_mm2": self.areas_mm2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComponentBudget":
        return cls(
            label=d["label"],
            clock_hz=float(d["clock_hz"]),
            ops_per_clk={int(k): float(v) for k, v in d["ops_per_clk"].items()},
            read_power_per_weight_w=float(d["read_power_per_weight_w"]),
            weights_per_read=int(d["weights_per_read"]),
            digital_power_w={int(k): float(v) for k, v in d["digital_power_w"].items()},
            areas_mm2={k: float(v) for k, v in d.get("areas_mm2", {}).items()},
        )

    @classmethod
    def from_json_file(cls, path) -> "ComponentBudget":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_builtin_budget(name: str) -> ComponentBudget:
    """Packaged budgets: ``pcm`` or ``sram``."""
    ref = resources.files("pcmbnn").joinpath(f"data/{name}_budget.json")
    return ComponentBudget.from_dict(json.loads(ref.read_text()))


def evaluate(budget: ComponentBudget, mode: int) -> dict:
    """Derived figures for one read-timing mode (NP/WP pulse ratio 8, 4 or 2)."""
    if mode not in budget.ops_per_clk or mode not in budget.digital_power_w:
        raise BudgetError(f"mode {mode} not present in budget {budget.label!r}")
    read_p = budget.total_read_power_w
    digital_p = budget.digital_power_w[mode]
    if read_p + digital_p <= 0:
        raise BudgetError("degenerate budget: zero total power")
    if budget.total_area_mm2 <= 0:
        raise BudgetError("degenerate budget: zero area")
    throughput_ops = budget.ops_per_clk[mode] * budget.clock_hz
    power_w = read_p + digital_p
    throughput_gops = throughput_ops / 1e9
    power_eff = throughput_gops / power_w
    return {
        "label": budget.label,
        "mode": mode,
        "throughput_gops": throughput_gops,
        "power_w": power_w,
        "power_eff_gops_per_w": power_eff,
        "total_area_mm2": budget.total_area_mm2,
        "total_eff_gops_per_w_mm2": power_eff / budget.total_area_mm2,
    }


def compare(a: ComponentBudget, b: ComponentBudget, mode: int) -> dict:
    """Efficiency ratios of budget ``a`` over budget ``b`` at one mode."""
    ra = evaluate(a, mode)
    rb = evaluate(b, mode)
    return {
        "mode": mode,
        "labels": [a.label, b.label],
        "throughput_ratio": ra["throughput_gops"] / rb["throughput_gops"],
        "power_eff_ratio": ra["power_eff_gops_per_w"] / rb["power_eff_gops_per_w"],
        "total_eff_ratio": ra["total_eff_gops_per_w_mm2"] / rb["total_eff_gops_per_w_mm2"],
    }
