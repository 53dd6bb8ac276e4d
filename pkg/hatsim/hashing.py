"""
Deterministic hashing utilities for seeds and simulation traces.

Seeds for every device and subsystem are derived from the root seed by hashing
a labelled path, so adding a device never perturbs another device's stream.
"""

import hashlib
from typing import Any, Iterable


def _normalize(part: Any) -> str:
    if isinstance(part, str):
        return part.strip().lower()
    return str(part)


def derive_seed(root_seed: int, *labels: Any) -> int:
    """Derive a child seed from the root seed and a label path.

    Args:
        root_seed: Scenario root seed
        labels: Path components, e.g. ("device", 3, "arrivals")

    Returns:
        Non-negative 63-bit integer seed

    Notes:
        - Labels are normalized (strings lowercased and stripped)
        - Uses '|' as separator and SHA256, first 8 bytes big-endian
    """
    parts = [str(int(root_seed))] + [_normalize(label) for label in labels]
    digest = hashlib.sha256('|'.join(parts).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big') & ((1 << 63) - 1)


def digest_lines(lines: Iterable[str]) -> str:
    """SHA256 hex digest of newline-terminated lines."""
    hasher = hashlib.sha256()
    for line in lines:
        hasher.update(line.encode('utf-8'))
        hasher.update(b'\n')
    return hasher.hexdigest()


def run_key(*parts: Any) -> str:
    """16-character key identifying one (scenario, framework, seed) run."""
    hash_input = '|'.join(str(p) for p in parts)
    return hashlib.sha256(hash_input.encode('utf-8')).hexdigest()[:16]
