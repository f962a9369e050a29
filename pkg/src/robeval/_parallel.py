"""Fixed-size chunking over a thread pool.

Chunk boundaries depend only on the chunk size, never on the worker count,
so batched floating-point work and per-example random streams see the same
inputs however many threads run.
"""
import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


def worker_count():
    raw = os.environ.get("AA_THREADS")
    if raw is None or raw == "":
        return max(1, min(8, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"AA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("AA_THREADS must be at least 1")
    return n


def map_chunks(fn, indices, chunk_size):
    """Apply ``fn`` to consecutive slices of ``indices``; results come back in order."""
    chunks = [indices[i : i + chunk_size] for i in range(0, len(indices), chunk_size)]
    workers = min(worker_count(), max(len(chunks), 1))
    if workers == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))
