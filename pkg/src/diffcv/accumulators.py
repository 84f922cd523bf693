"""Streaming moment accumulation (Welford) with pairwise merging.

Sample batches may be aggregated in any partition order; merging uses Chan's
parallel update so the result is independent of scheduling up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class Welford:
    """Single-pass count/mean/M2 accumulator."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def add_many(self, values) -> None:
        for v in values:
            self.add(float(v))

    def merge(self, other: "Welford") -> "Welford":
        """Combine with another accumulator (Chan's formula); returns self."""
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        """Unbiased (n-1) sample variance."""
        if self.count < 2:
            return 0.0
        return self.m2 / (self.count - 1)

    @property
    def std_error(self) -> float:
        if self.count < 2:
            return 0.0
        return math.sqrt(self.variance / self.count)


def from_block(count: int, mean: float, m2: float) -> Welford:
    """Build an accumulator from block aggregates computed elsewhere."""
    w = Welford()
    w.count, w.mean, w.m2 = int(count), float(mean), float(m2)
    return w
