"""Update-only workload generation with hotspot contention.

Each client is an independent Poisson process writing one key per
transaction: the hotspot key with the configured probability, otherwise a
uniformly chosen key from the rest of the keyspace. Streams are drawn from
named child seeds so a run replays exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .model import SECOND, Transaction, put


@dataclass(frozen=True, slots=True)
class WorkloadConfig:
    num_clients: int = 10
    rate_per_client: float = 2.0      # transactions per second
    keyspace_size: int = 100
    hotspot_probability: float = 0.0
    hotspot_keys: int = 1
    total_transactions: int = 1000
    deadline_offset: int = 5 * SECOND

    def __post_init__(self):
        if self.num_clients <= 0 or self.rate_per_client <= 0:
            raise ValueError("client count and rate must be positive")
        if not 0.0 <= self.hotspot_probability <= 1.0:
            raise ValueError("hotspot probability must be in [0, 1]")
        if self.keyspace_size < self.hotspot_keys or self.hotspot_keys < 1:
            raise ValueError("keyspace must contain the hotspot keys")
        if self.total_transactions <= 0 or self.deadline_offset <= 0:
            raise ValueError("need positive transaction count and deadline")

    @property
    def duration(self) -> int:
        # Submission window sized so the expected total matches the target.
        seconds = self.total_transactions / (self.num_clients
                                             * self.rate_per_client)
        return int(round(seconds * SECOND))

CLIENT_ID_BASE = 1000


def generate_workload(cfg: WorkloadConfig, seed) -> list:
    """Timed transaction submissions, sorted by submit time.

    Returns [(submit_time, Transaction)]; expect len to be close to, but
    not exactly, cfg.total_transactions (Poisson arrivals over a fixed
    window).
    """
    id_rng = random.Random(f"{seed}/workload/ids")
    submissions = []
    duration = cfg.duration
    for client in range(cfg.num_clients):
        rng = random.Random(f"{seed}/workload/client/{client}")
        at = 0.0
        while True:
            at += rng.expovariate(cfg.rate_per_client) * SECOND
            if at >= duration:
                break
            submit_time = max(1, int(at))
            key = _pick_key(cfg, rng)
            value = id_rng.getrandbits(64).to_bytes(8, "big")
            tx = Transaction(
                id=id_rng.getrandbits(128).to_bytes(16, "big"),
                deadline=submit_time + cfg.deadline_offset,
                preconditions=(),
                ops=(put(key, value),),
                submitter=CLIENT_ID_BASE + client,
                submit_time=submit_time,
            )
            submissions.append((submit_time, tx))
    submissions.sort(key=lambda item: (item[0], item[1].id))
    return submissions


def _pick_key(cfg: WorkloadConfig, rng: random.Random) -> str:
    if cfg.hotspot_probability > 0 and rng.random() < cfg.hotspot_probability:
        return f"hot-{rng.randrange(cfg.hotspot_keys)}"
    return f"key-{rng.randrange(cfg.keyspace_size - cfg.hotspot_keys)}"
