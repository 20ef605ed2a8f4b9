"""Bit-serial compute-in-memory array with a clamp-only ADC model.

Cells hold -1/+1.  Multi-bit unsigned inputs are streamed LSB-first, one
bitplane per cycle; each cycle produces per-column signed sums which pass
through the ADC and are shift-and-added digitally.  The ideal ADC is the
identity, so the result equals the exact integer matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdcModel:
    """Column ADC: identity on integers, or a clamp to the signed range."""

    bits: int = 8
    mode: str = "ideal"

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("adc bits must be positive")
        if self.mode not in ("ideal", "saturating"):
            raise ValueError(f"unknown adc mode {self.mode!r}")

    def convert(self, sums: np.ndarray) -> np.ndarray:
        if self.mode == "ideal":
            return sums
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        return np.clip(sums, lo, hi)


@dataclass(frozen=True)
class BitSerialConfig:
    """Input precision: unsigned activations streamed LSB-first."""

    act_bits: int = 8

    def __post_init__(self):
        if self.act_bits < 1:
            raise ValueError("act_bits must be positive")

    def check_inputs(self, x: np.ndarray) -> None:
        if x.size == 0:
            return
        if np.min(x) < 0 or np.max(x) >= 1 << self.act_bits:
            raise ValueError(f"inputs outside [0, 2^{self.act_bits})")


@dataclass
class CimArray:
    rows: int
    cols: int
    cells: np.ndarray | None = None  # (rows, cols) int8 in {-1, +1}
    write_events: int = field(default=0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array dimensions must be positive")

    def load_weights(self, cells: np.ndarray) -> None:
        cells = np.asarray(cells)
        if cells.shape != (self.rows, self.cols):
            raise ValueError(f"cells shape {cells.shape}, expected {(self.rows, self.cols)}")
        if not np.all(np.abs(cells) == 1):
            raise ValueError("cells must all be -1 or +1")
        self.cells = cells.astype(np.int8)
        self.cells.setflags(write=False)
        self.write_events += 1

    def _require_loaded(self) -> np.ndarray:
        if self.cells is None:
            raise RuntimeError("array has no weights loaded")
        return self.cells

    def column_sums(self, bitplane: np.ndarray) -> np.ndarray:
        """One analog cycle: signed per-column sum of the active rows."""
        cells = self._require_loaded()
        plane = np.asarray(bitplane)
        if plane.shape != (self.rows,):
            raise ValueError(f"bitplane length {plane.shape}, expected ({self.rows},)")
        return plane.astype(np.int32) @ cells.astype(np.int32)

    def bit_serial_matvec(
        self, inputs: np.ndarray, adc: AdcModel, cfg: BitSerialConfig
    ) -> np.ndarray:
        """Stream an unsigned input vector through the array bit-serially."""
        x = np.asarray(inputs)
        if x.shape != (self.rows,):
            raise ValueError(f"input length {x.shape}, expected ({self.rows},)")
        cfg.check_inputs(x)
        acc = np.zeros(self.cols, dtype=np.int64)
        for b in range(cfg.act_bits):
            plane = (x.astype(np.int64) >> b) & 1
            acc += np.int64(1 << b) * adc.convert(self.column_sums(plane)).astype(np.int64)
        return acc


def bit_serial_matmul(
    cells: np.ndarray, inputs: np.ndarray, adc: AdcModel, cfg: BitSerialConfig
) -> np.ndarray:
    """Batched bit-serial product: (n, rows) inputs x (rows, cols) cells.

    Same per-bitplane ADC behavior as CimArray.bit_serial_matvec, vectorized
    over many input vectors at once.
    """
    x = np.asarray(inputs)
    cfg.check_inputs(x)
    w = np.asarray(cells, dtype=np.int32)
    acc = np.zeros((x.shape[0], w.shape[1]), dtype=np.int64)
    for b in range(cfg.act_bits):
        plane = ((x.astype(np.int64) >> b) & 1).astype(np.int32)
        sums = plane @ w
        acc += np.int64(1 << b) * adc.convert(sums).astype(np.int64)
    return acc
