"""32-bit Fibonacci linear feedback shift register.

Drives the stochastic arbitration that picks which noise-plane row joins
each weight-row read. Taps follow the maximal-length polynomial
x^32 + x^22 + x^2 + x + 1, giving a period of 2^32 - 1; row indices come
from the low bits of the refreshed state.
"""

from __future__ import annotations

import numpy as np

# Tap bits for x^32 + x^22 + x^2 + x + 1 (bit 31, 21, 1, 0).
TAP_MASK = 0x80200003
_WORD = 0xFFFFFFFF


class Lfsr32:
    def __init__(self, seed: int):
        seed = int(seed) & _WORD
        if seed == 0:
            raise ValueError("LFSR seed must be nonzero")
        self.state = seed

    def step(self) -> int:
        """Advance one shift; returns the refreshed 32-bit state."""
        fb = (self.state & TAP_MASK).bit_count() & 1
        self.state = ((self.state << 1) | fb) & _WORD
        return self.state

    def next_index(self, np_rows: int) -> int:
        """One arbitration draw: low log2(np_rows) bits of the next state."""
        if np_rows & (np_rows - 1):
            raise ValueError("np_rows must be a power of two")
        return self.step() & (np_rows - 1)

    def next_rows(self, np_rows: int, n_r: int) -> tuple[int, ...]:
        """Draw ``n_r`` distinct row indices (redraw on collision)."""
        first = self.next_index(np_rows)
        if n_r == 1:
            return (first,)
        second = self.next_index(np_rows)
        while second == first:
            second = self.next_index(np_rows)
        return (first, second)

    def draw_row_block(self, n_reads: int, np_rows: int, n_r: int) -> np.ndarray:
        """Arbitration indices for a block of row reads, shape (n_reads, n_r)."""
        out = np.empty((n_reads, n_r), dtype=np.int64)
        for i in range(n_reads):
            out[i] = self.next_rows(np_rows, n_r)
        return out
