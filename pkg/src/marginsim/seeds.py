"""Deterministic sub-seed derivation.

Every source of randomness in a run (trace generation, agent weight init,
exploration noise, replay sampling, the random baseline strategy) draws its
seed from the single scenario seed through `subseed`.  The derivation is a
SHA-256 hash of the root seed joined with a path of names, so streams are
independent, stable across runs and platforms, and insensitive to the order
in which components are constructed.

Stream names used by the package:

    ("trace",)                              synthetic trace generation
    ("agent", <metric>, <scope>)            one DDPG agent (scope is "shared"
                                            or a host id); the agent splits
                                            this further for init / noise /
                                            warmup / replay internally
    ("strategy", "random", <metric>)        the random baseline strategy
"""

import hashlib


def subseed(root: int, *names) -> int:
    """Derive a 63-bit child seed from `root` and a path of names."""
    text = "/".join(str(part) for part in (root, *names))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
