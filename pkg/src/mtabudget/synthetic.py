"""Random event corpora for property checks and throughput runs."""

from __future__ import annotations

import random

from .core import SECONDS_PER_DAY, ActionEvent, Kind, TouchPoint, UserHistory


def synthetic_corpus(
    n_users: int,
    seed: int = 0,
    n_line_items: int = 6,
    n_advertisers: int = 1,
    as_of: int = 100 * SECONDS_PER_DAY,
    horizon_days: int = 45,
    mean_touch_points: float = 4.0,
    action_rate: float = 0.3,
    max_cost: int = 20,
) -> list[UserHistory]:
    """Users with random touch-points and actions over ``horizon_days``
    ending at ``as_of``. Line item ``k`` of advertiser ``a`` is ``a{a}-li{k}``
    under IO ``a{a}-io{k % 2}``."""
    rng = random.Random(seed)
    lo = as_of - horizon_days * SECONDS_PER_DAY
    users = []
    seq = 0
    for u in range(n_users):
        uid = f"user{u:07d}"
        tps = []
        acts = []
        n_tp = min(int(rng.expovariate(1.0 / mean_touch_points)) + 1, 40)
        for _ in range(n_tp):
            adv = rng.randrange(n_advertisers)
            k = rng.randrange(n_line_items)
            seq += 1
            tps.append(TouchPoint(
                uid, rng.randint(lo, as_of),
                Kind.CLICK if rng.random() < 0.1 else Kind.IMPRESSION,
                f"a{adv}-li{k}", f"a{adv}-io{k % 2}", f"a{adv}", rng.randint(0, max_cost), seq,
            ))
        while rng.random() < action_rate:
            adv = rng.randrange(n_advertisers)
            seq += 1
            acts.append(ActionEvent(uid, rng.randint(lo, as_of), f"a{adv}", f"a{adv}-io0",
                                    rng.randint(0, 10_000), seq))
        users.append(UserHistory.build(uid, tps, acts))
    return users
