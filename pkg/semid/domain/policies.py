"""
Small rule functions used by the quantizers and the metrics.

They encapsulate decisions that are not part of any algorithm proper:
default branching factors and balanced cluster capacities.
"""

from __future__ import annotations

from math import sqrt
from typing import List

import numpy as np


def default_branching(num_items: int, target_prefix_population: int = 15) -> List[int]:
    """Two prefix levels with ``b_1 ~ b_2`` and ``b_1*b_2 ~ N / target``.

    The product of the prefix branching factors is kept 10 to 20 times
    smaller than the number of items, so each last-level prefix holds about
    ``target_prefix_population`` items. Never returns factors below 2, and
    falls back to a single level when ``N`` cannot fill two.

    Args:
        num_items: Number of items N.
        target_prefix_population: Desired mean population per prefix.

    Returns:
        ``[b_1, b_2]`` or ``[b_1]`` for tiny item sets.
    """
    if num_items < 2:
        raise ValueError(f"need at least 2 items, got {num_items}")
    if target_prefix_population < 1:
        raise ValueError("target_prefix_population must be >= 1")
    leaves = num_items / float(target_prefix_population)
    if leaves < 4:
        return [max(2, min(num_items, int(round(leaves)) or 2))]
    b = max(2, int(round(sqrt(leaves))))
    b2 = max(2, int(round(leaves / b)))
    return [b, b2]


def balanced_capacities(n: int, b: int) -> np.ndarray:
    """Cluster sizes of a balanced split: ``n % b`` clusters of ``ceil(n/b)``, the rest ``floor(n/b)``."""
    if b < 1 or n < b:
        raise ValueError(f"cannot split {n} points into {b} non-empty clusters")
    q, r = divmod(n, b)
    caps = np.full(b, q, dtype=np.int64)
    caps[:r] += 1
    return caps


