"""Deterministic path-parallel execution.

Every Monte Carlo path owns a Philox substream keyed by ``(seed, stream,
path_index)``. Paths are grouped into fixed-size chunks whose boundaries do
not depend on the worker count, and chunk results are always combined in
chunk order, so estimates are bit-identical under any degree of parallelism.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

ENV_WORKERS = "HMMDUAL_WORKERS"
CHUNK_SIZE = 512

# substream tags
STREAM_NOISE_TILDE = 0
STREAM_NOISE_PRIOR = 1
STREAM_STATE = 2


def worker_count():
    """Number of worker threads: ``$HMMDUAL_WORKERS`` or all cores."""
    raw = os.environ.get(ENV_WORKERS, "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_WORKERS} must be a positive integer, got {raw!r}")
        if n < 1:
            raise ValueError(f"{ENV_WORKERS} must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def path_rng(seed, path_index, stream):
    """Counter-based generator for one path and one purpose."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(path_index)))
    return np.random.Generator(np.random.Philox(ss))


def chunk_ranges(start, stop, chunk_size=CHUNK_SIZE):
    return [range(i, min(i + chunk_size, stop)) for i in range(start, stop, chunk_size)]


def map_chunks(fn, n_paths, *, start=0, chunk_size=CHUNK_SIZE, workers=None):
    """Apply ``fn(range_of_path_indices)`` to every chunk; results in chunk order."""
    chunks = chunk_ranges(start, start + n_paths, chunk_size)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
        return list(pool.map(fn, chunks))


def mean_and_stderr(values):
    """Entrywise sample mean and standard error over axis 0.

    Uses exactly rounded summation so the result does not depend on how
    the rows were produced. With a single sample the standard error is
    ``inf``.
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[0]
    flat = x.reshape(n, -1)
    mean = np.array([math.fsum(col) / n for col in flat.T])
    if n > 1:
        dev = flat - mean
        var = np.array([math.fsum(col) / (n - 1) for col in (dev * dev).T])
        se = np.sqrt(var / n)
    else:
        se = np.full_like(mean, np.inf)
    return mean.reshape(x.shape[1:]), se.reshape(x.shape[1:])


def combine_moments(parts):
    """Merge per-chunk ``(count, sum, sum_sq)`` triples into mean and stderr.

    ``sum`` and ``sum_sq`` may be arrays (for example one entry per grid
    point). Chunks are combined in the order given.
    """
    n = sum(p[0] for p in parts)
    s1 = np.sum(np.stack([np.asarray(p[1], dtype=float) for p in parts]), axis=0)
    s2 = np.sum(np.stack([np.asarray(p[2], dtype=float) for p in parts]), axis=0)
    mean = s1 / n
    if n > 1:
        var = np.maximum(s2 - n * mean * mean, 0.0) / (n - 1)
        se = np.sqrt(var / n)
    else:
        se = np.full_like(mean, np.inf)
    return mean, se
