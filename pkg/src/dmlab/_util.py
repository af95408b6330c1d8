"""Shared plumbing: 64-bit mixing, deterministic chunked maps, CSV/JSON formatting."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Sequence

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the splitmix64 finalizer (stateless 64-bit mixer)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix64(a: int, b: int) -> int:
    """Collision-resistant combine of two 64-bit values into one."""
    return splitmix64((splitmix64(a & _MASK64) ^ (b & _MASK64)) & _MASK64)


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (round-trip safe)."""
    return f"{x:.17g}"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV with header, comma separation, 17-digit floats, final newline."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fields = [fmt17(v) if isinstance(v, float) else str(v) for v in row]
            fh.write(",".join(fields) + "\n")


def canonical_json(obj: Any) -> str:
    """Deterministic JSON encoding: sorted keys, no float mangling."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def ordered_map(fn: Callable[[Any], Any], items: Sequence[Any], workers: int = 1) -> list:
    """Map fn over items, results in input order regardless of worker count.

    Each item must be self-contained (carry its own RNG stream); the reduction
    order is the input order, so output is worker-count invariant.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
