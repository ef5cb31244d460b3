"""Run a whole job in one process: coordinator on the calling thread, workers on a pool."""

from __future__ import annotations

from concurrent.futures import Future, ThreadPoolExecutor
from typing import List, Sequence

from glmd.distributed import DistributedEstimate, Method, Shard
from glmd.glm_core import GlmFamily
from glmd.logger import get_logger
from glmd.netproto.coordinator import coordinator_run
from glmd.netproto.transport import Transport
from glmd.netproto.worker import EXIT_OK, worker_run
from glmd.solver import FitOptions


log = get_logger(__name__)

# Reported for a worker thread that raised instead of returning an exit status.
EXIT_CRASHED = -1


def _worker_status(future: Future[int]) -> int:
    error = future.exception()
    if error is not None:
        log.error("Worker thread raised %s: %s", type(error).__name__, error)
        return EXIT_CRASHED
    return future.result()


def run_job(
    family: GlmFamily,
    shards: Sequence[Shard],
    opts: FitOptions,
    method: Method,
    transport: Transport,
) -> DistributedEstimate:
    """Listen on *transport*, start one worker thread per shard and coordinate them.

    Works the same for both transport modes; with a socket transport the
    workers dial the loopback endpoint the listener actually bound.
    """

    listener = transport.listen()
    statuses: List[int] = []
    with ThreadPoolExecutor(max_workers=len(shards), thread_name_prefix="glmd-worker") as pool:
        futures = [pool.submit(worker_run, family, shard, opts, listener.transport) for shard in shards]
        try:
            return coordinator_run(family, len(shards), opts, method, listener)
        finally:
            listener.close()
            statuses = [_worker_status(f) for f in futures]
            failed = [s.worker_id for s, code in zip(shards, statuses) if code != EXIT_OK]
            if failed:
                log.warning("Workers %s exited with non-zero status", failed)
