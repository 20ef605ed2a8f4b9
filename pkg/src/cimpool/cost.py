"""Energy, area, and latency estimation from traces and model statistics.

All absolute constants are calibration inputs loaded from JSON; the shipped
defaults reproduce a published 7 nm accelerator analysis for a
ResNet-18-class workload and are reference points, not process truths.
Scaling rules:

    dram energy  = params * effective_bits * e_dram
    cim energy   = macs * active_bitcols * e_cim
    weight sram  = params * effective_bits * area_per_bit
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources

from .executor import ExecutionTrace, TileSchedule
from .scheduler import SchedulerConfig, stream_stats

PJ_TO_UJ = 1e-6


@dataclass(frozen=True)
class CostConfig:
    e_dram_pj_per_bit: float = 4.0
    e_cim_pj_per_bitcol_mac: float = 0.125
    e_sram_rd_pj_per_byte: float = 1.0
    e_sram_wr_pj_per_byte: float = 1.0
    area_mm2_per_sram_bit: float = 2.2495318352059925e-07
    cim_array_area_mm2: float = 0.2
    act_sram_area_mm2: float = 3.6
    clock_ns: float | None = None

    def __post_init__(self):
        for name in (
            "e_dram_pj_per_bit",
            "e_cim_pj_per_bitcol_mac",
            "e_sram_rd_pj_per_byte",
            "e_sram_wr_pj_per_byte",
            "area_mm2_per_sram_bit",
            "cim_array_area_mm2",
            "act_sram_area_mm2",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_json(cls, doc: dict) -> "CostConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass(frozen=True)
class SchemeSpec:
    """Per-weight storage and per-MAC activity of one weight encoding."""

    name: str
    effective_bits_per_weight: float
    active_bitcols: float
    cim_array_area_mm2: float | None = None

    def __post_init__(self):
        if self.effective_bits_per_weight <= 0 or self.active_bitcols <= 0:
            raise ValueError("scheme bits must be positive")

    @classmethod
    def quantized(cls, bits: int) -> "SchemeSpec":
        return cls(name=f"cim-{bits}bit", effective_bits_per_weight=float(bits), active_bitcols=float(bits))

    @classmethod
    def weight_pool(cls, sparsity: float, index_bits: int = 5, vector_size: int = 128) -> "SchemeSpec":
        # index plus kept error bits, amortized per weight; both arrays active
        eff = (index_bits + vector_size * (1.0 - sparsity)) / vector_size
        return cls(
            name=f"cimpool-{sparsity:g}",
            effective_bits_per_weight=eff,
            active_bitcols=1.0 + (1.0 - sparsity),
        )

    @classmethod
    def from_json(cls, name: str, doc: dict) -> "SchemeSpec":
        if "sparsity" in doc:
            base = cls.weight_pool(float(doc["sparsity"]))
            return replace(
                base,
                name=name,
                cim_array_area_mm2=doc.get("cim_array_area_mm2"),
            )
        return cls(
            name=name,
            effective_bits_per_weight=float(doc["effective_bits_per_weight"]),
            active_bitcols=float(doc["active_bitcols"]),
            cim_array_area_mm2=doc.get("cim_array_area_mm2"),
        )


@dataclass
class CostReport:
    scheme: str
    cim_energy_uj: float = 0.0
    sram_energy_uj: float = 0.0
    dram_energy_uj: float = 0.0
    area_mm2: dict = field(default_factory=dict)
    latency_bit_cycles: int = 0
    latency_s: float | None = None

    @property
    def total_uj(self) -> float:
        return self.cim_energy_uj + self.sram_energy_uj + self.dram_energy_uj

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "cim_energy_uj": self.cim_energy_uj,
            "sram_energy_uj": self.sram_energy_uj,
            "dram_energy_uj": self.dram_energy_uj,
            "total_uj": self.total_uj,
            "area_mm2": self.area_mm2,
            "latency_bit_cycles": self.latency_bit_cycles,
            "latency_s": self.latency_s,
        }


def _macs(trace_or_count) -> int:
    if isinstance(trace_or_count, ExecutionTrace):
        return trace_or_count.pool_macs
    return int(trace_or_count)


def dram_energy(n_params: float, scheme: SchemeSpec, config: CostConfig) -> float:
    """One-pass weight fetch energy in microjoules."""
    if n_params < 0:
        raise ValueError("n_params must be non-negative")
    return n_params * scheme.effective_bits_per_weight * config.e_dram_pj_per_bit * PJ_TO_UJ


def cim_energy(trace_or_macs, scheme: SchemeSpec, config: CostConfig) -> float:
    """Array compute energy: MACs times simultaneously active bit-columns."""
    return _macs(trace_or_macs) * scheme.active_bitcols * config.e_cim_pj_per_bitcol_mac * PJ_TO_UJ


def sram_energy(trace: ExecutionTrace, config: CostConfig) -> float:
    return (
        trace.act_read_bytes * config.e_sram_rd_pj_per_byte
        + trace.act_write_bytes * config.e_sram_wr_pj_per_byte
    ) * PJ_TO_UJ


def _cim_area(scheme: SchemeSpec, config: CostConfig) -> float:
    if scheme.cim_array_area_mm2 is not None:
        return scheme.cim_array_area_mm2
    return config.cim_array_area_mm2


def area_report(n_params: float, scheme: SchemeSpec, config: CostConfig) -> dict:
    weight = n_params * scheme.effective_bits_per_weight * config.area_mm2_per_sram_bit
    breakdown = {
        "weight_sram_mm2": weight,
        "act_sram_mm2": config.act_sram_area_mm2,
        "cim_array_mm2": _cim_area(scheme, config),
    }
    breakdown["total_mm2"] = sum(breakdown.values())
    return breakdown


def max_params_for_budget(budget_mm2: float, scheme: SchemeSpec, config: CostConfig) -> float:
    fixed = config.act_sram_area_mm2 + _cim_area(scheme, config)
    if budget_mm2 <= fixed:
        raise ValueError(
            f"budget {budget_mm2} mm2 does not exceed fixed areas {fixed} mm2"
        )
    return (budget_mm2 - fixed) / config.area_mm2_per_sram_bit / scheme.effective_bits_per_weight


def latency_cycles(
    schedule: TileSchedule, sched_cfg: SchedulerConfig, positions_by_layer: dict
) -> int:
    """Bit-serial cycles to stream every tile, including fill/flush overhead."""
    total = 0
    for tile in schedule.tiles:
        total += stream_stats(sched_cfg, positions_by_layer[tile.layer]).bit_cycles
    return total


def total_report(
    trace: ExecutionTrace,
    n_params: float,
    scheme: SchemeSpec,
    config: CostConfig,
    sram_energy_override: float | None = None,
) -> CostReport:
    report = CostReport(scheme=scheme.name)
    report.cim_energy_uj = cim_energy(trace, scheme, config)
    report.dram_energy_uj = dram_energy(n_params, scheme, config)
    report.sram_energy_uj = (
        sram_energy_override if sram_energy_override is not None else sram_energy(trace, config)
    )
    report.area_mm2 = area_report(n_params, scheme, config)
    report.latency_bit_cycles = trace.scheduler.bit_cycles
    if config.clock_ns is not None:
        report.latency_s = report.latency_bit_cycles * config.clock_ns * 1e-9
    return report


def format_report_table(reports: list[CostReport]) -> str:
    """Aligned text table, one scheme per row."""
    headers = ["scheme", "CIM (uJ)", "SRAM (uJ)", "DRAM (uJ)", "Total (uJ)", "Area (mm2)"]
    rows = [headers]
    for r in reports:
        rows.append(
            [
                r.scheme,
                f"{r.cim_energy_uj:.1f}",
                f"{r.sram_energy_uj:.1f}",
                f"{r.dram_energy_uj:.1f}",
                f"{r.total_uj:.1f}",
                f"{r.area_mm2.get('total_mm2', 0.0):.1f}",
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def load_calibration(path: str | None = None) -> dict:
    """Calibration document: cost constants, scheme table, anchor rows."""
    if path is None:
        path = os.environ.get("CIMPOOL_CALIB")
    if path is None:
        text = (
            resources.files("cimpool")
            .joinpath("calibration/reference_calibration.json")
            .read_text(encoding="utf-8")
        )
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    return json.loads(text)


def config_from_calibration(doc: dict) -> CostConfig:
    return CostConfig.from_json(doc.get("cost", {}))


def schemes_from_calibration(doc: dict) -> dict[str, SchemeSpec]:
    return {
        name: SchemeSpec.from_json(name, entry)
        for name, entry in doc.get("schemes", {}).items()
    }
