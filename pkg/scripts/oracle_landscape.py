"""Exact cost surface of scalar affine strategies on the finite-support micro-instance.

Each grid point ``(a, b)`` is the strategy ``u_0 = a x_0(t)``,
``u_1 = b x̂_1(t|1)``; its cost is computed by exhaustive enumeration.  The
first CSV row after the header is the certainty-equivalent optimum, marked
with empty gains.
"""

from __future__ import annotations

import csv
import itertools
import sys
from dataclasses import dataclass

import numpy as np

from _config import parse_config
from mmlq.oracle import ExactLaw, affine_policy, exact_rollout, certainty_equivalent_policy
from mmlq.scenarios import micro_instance


@dataclass
class Config:
    horizon: int = 3
    step: float = 0.1
    limit: float = 3.0
    out: str = "-"


def main(argv=None) -> None:
    cfg = parse_config(Config, __doc__.splitlines()[0], argv)
    s = micro_instance(T=cfg.horizon)
    law = ExactLaw(s)
    k = int(round(cfg.limit / cfg.step))
    grid = np.round(np.arange(-k, k + 1) * cfg.step, 12)
    out = sys.stdout if cfg.out == "-" else open(cfg.out, "w", newline="")
    wr = csv.writer(out)
    wr.writerow(["a", "b", "J"])
    wr.writerow(["", "", repr(exact_rollout(s, certainty_equivalent_policy(s), law).J)])
    for a, b in itertools.product(grid, grid):
        wr.writerow([a, b, repr(exact_rollout(s, affine_policy(a, b), law).J)])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
