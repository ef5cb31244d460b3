"""Worker side of the exchange: a single-threaded state machine per shard.

    HELLO -> local fit -> LOCAL_FIT -> (BROADCAST_BETA -> LOCAL_SCORE_FISHER)? -> RESULT

The worker exits 0 after RESULT, 3 when its local fit fails (numerical failure
or invalid shard data) and 4 on any transport or protocol problem, including
an ABORT from the coordinator.
"""

from __future__ import annotations

from typing import Optional

from glmd.distributed import Shard
from glmd.errors import GlmdError, ProtocolError, TransportError
from glmd.glm_core import GlmFamily, fisher_info, score
from glmd.logger import get_logger
from glmd.netproto.codec import (
    Abort,
    BroadcastBeta,
    Hello,
    LocalFit,
    LocalScoreFisher,
    Result,
    decode_message,
    encode_message,
)
from glmd.netproto.transport import Channel, Transport
from glmd.solver import FitOptions, fit_mle


log = get_logger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 3
EXIT_TRANSPORT = 4

ABORT_PROTOCOL = 1
ABORT_NUMERICAL = 3


def _try_abort(channel: Channel, code: int, message: str) -> None:
    try:
        channel.send(encode_message(Abort(code, message)))
    except GlmdError:
        log.debug("Could not deliver ABORT to coordinator")


def worker_run(family: GlmFamily, shard: Shard, opts: Optional[FitOptions], dial: Transport) -> int:
    """Serve one shard to the coordinator reachable through *dial*; return an exit status."""

    opts = opts or FitOptions()
    wid = shard.worker_id
    data = shard.data
    try:
        channel = dial.dial()
    except TransportError as exc:
        log.error("Worker %d: %s", wid, exc)
        return EXIT_TRANSPORT

    try:
        channel.send(encode_message(Hello(wid, data.n, data.p, family.code)))

        try:
            fit = fit_mle(family, data, None, opts)
        except GlmdError as exc:
            log.error("Worker %d: local fit failed: %s", wid, exc)
            _try_abort(channel, ABORT_NUMERICAL, f"worker {wid}: {exc}")
            return EXIT_NUMERICAL
        channel.send(encode_message(LocalFit(fit.converged, fit.iterations, fit.estimate, fit.fisher_at_estimate)))

        while True:
            msg = decode_message(channel.recv(dial.round_timeout))
            if isinstance(msg, Result):
                log.debug("Worker %d: RESULT received (method code %d)", wid, msg.method)
                return EXIT_OK
            if isinstance(msg, Abort):
                log.error("Worker %d: coordinator aborted (code %d): %s", wid, msg.code, msg.message)
                return EXIT_TRANSPORT
            if not isinstance(msg, BroadcastBeta):
                raise ProtocolError(f"unexpected {type(msg).__name__} from coordinator", offset=5)
            if len(msg.beta) != data.p:
                raise ProtocolError(f"BROADCAST_BETA has length {len(msg.beta)}, expected p={data.p}", offset=10)
            try:
                local_score = score(family, data, msg.beta)
                local_fisher = fisher_info(family, data, msg.beta)
            except GlmdError as exc:
                log.error("Worker %d: score/Fisher at broadcast estimate failed: %s", wid, exc)
                _try_abort(channel, ABORT_NUMERICAL, f"worker {wid}: {exc}")
                return EXIT_NUMERICAL
            channel.send(encode_message(LocalScoreFisher(local_score, local_fisher)))
    except ProtocolError as exc:
        log.error("Worker %d: protocol violation: %s", wid, exc)
        _try_abort(channel, ABORT_PROTOCOL, f"worker {wid}: {exc}")
        return EXIT_TRANSPORT
    except TransportError as exc:
        log.error("Worker %d: %s", wid, exc)
        return EXIT_TRANSPORT
    finally:
        channel.close()
