"""Small shared helpers: seeded RNG derivation and thread limiting."""

import contextlib

import numpy as np


def derived_rng(master_seed, *indices):
    """Deterministic child generator for (master_seed, *indices).

    Results depend only on the seed tuple, never on call order, so
    parallel workers can derive their own streams independently.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                spawn_key=tuple(int(i) for i in indices))
    return np.random.default_rng(ss)


def derived_seed(master_seed, *indices):
    """64-bit integer seed derived from (master_seed, *indices)."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@contextlib.contextmanager
def single_blas_thread():
    """Pin BLAS to one thread inside worker processes.

    Avoids oversubscription when toys are dispatched across a process
    pool; a no-op if threadpoolctl is unavailable.
    """
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield
