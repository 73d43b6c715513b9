"""Shared helper: expose a dataclass config as command-line flags."""

from __future__ import annotations

import argparse
import dataclasses


def parse_config(cls, description: str, argv=None):
    """Build ``cls`` from ``--field value`` flags, falling back to the dataclass defaults."""
    p = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    return cls(**vars(p.parse_args(argv)))
