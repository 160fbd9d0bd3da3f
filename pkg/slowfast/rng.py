"""Counter-based noise streams.

Every Gaussian draw is addressed by ``(channel, step, replica)``; the whole
ensemble for one address is produced in a single call, so the particle
update order and the thread count never change the numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

CHANNELS: Dict[str, int] = {
    "rho": 1,
    "xi": 2,
    "B": 3,
    "W": 4,
    "V": 5,
    "probe": 6,
    "resample": 7,
    "bootstrap": 8,
}

STREAM_LAYOUT = "philox(key=SeedSequence([master_seed, channel]), counter=[0, 0, step, replica])"


@dataclass(frozen=True)
class SeedLedger:
    master_seed: int
    replica: int = 0
    channels: Dict[str, int] = field(default_factory=lambda: dict(CHANNELS))
    layout: str = STREAM_LAYOUT

    def to_dict(self) -> Dict[str, Any]:
        return {
            "master_seed": self.master_seed,
            "replica": self.replica,
            "channels": dict(self.channels),
            "layout": self.layout,
        }


class NoiseStreams:
    def __init__(self, master_seed: int, replica: int = 0) -> None:
        if master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        self.master_seed = int(master_seed)
        self.replica = int(replica)
        self._keys: Dict[str, np.ndarray] = {}

    @property
    def ledger(self) -> SeedLedger:
        return SeedLedger(master_seed=self.master_seed, replica=self.replica)

    def _key(self, channel: str) -> np.ndarray:
        key = self._keys.get(channel)
        if key is None:
            sequence = np.random.SeedSequence([self.master_seed, CHANNELS[channel]])
            key = sequence.generate_state(2, dtype=np.uint64)
            self._keys[channel] = key
        return key

    def generator(self, channel: str, step: int = 0) -> np.random.Generator:
        counter = np.array([0, 0, step, self.replica], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key(channel), counter=counter))

    def normals(self, channel: str, step: int, shape: Tuple[int, ...]) -> np.ndarray:
        return self.generator(channel, step).standard_normal(shape)

    def increments(self, channel: str, step: int, shape: Tuple[int, ...], dt: float, substeps: int = 1) -> np.ndarray:
        """Brownian increments over one step of length ``dt``.

        With ``substeps > 1`` the increment is the sum of the draws at counters
        ``step * substeps`` onwards, each over ``dt / substeps``; a run on the
        finer grid reads the same counters one at a time and so follows the
        same Brownian path.
        """
        if substeps == 1:
            return np.sqrt(dt) * self.normals(channel, step, shape)
        fine = math.sqrt(dt / substeps)
        total = np.zeros(shape)
        for index in range(step * substeps, (step + 1) * substeps):
            total += fine * self.normals(channel, index, shape)
        return total
