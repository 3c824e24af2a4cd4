"""Deterministic per-replica random streams."""
from __future__ import annotations

import numpy as np


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Stream for ``replica`` derived from (master_seed, replica) only."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(replica)]))


def split_budget(total: int, replicas: int) -> list[int]:
    base, extra = divmod(int(total), int(replicas))
    return [base + (i < extra) for i in range(int(replicas))]
