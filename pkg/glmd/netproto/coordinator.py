"""Coordinator side of the two-round exchange.

Round 1 collects every worker's local MLE and its Fisher matrix; ``average``
and ``aee`` finish there.  ``one_step`` and ``csl_one_step`` broadcast the
weighted mean, collect local scores and Fisher matrices at that point
(round 2) and take one aggregated Fisher-scoring step.  Every round waits for
all K workers before aggregating in ascending worker_id order.
"""

from __future__ import annotations

import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Dict, List, Optional, Type, Union

import numpy as np

from glmd.distributed import (
    METHOD_CODES,
    ROUNDS_OF_COMMUNICATION,
    DistributedEstimate,
    Method,
    aee_combine,
    csl_combine,
    one_step_combine,
    weighted_average,
)
from glmd.errors import (
    ArgumentError,
    GlmdError,
    NumericalError,
    ProtocolError,
    TransportError,
    WorkerAbortedError,
)
from glmd.glm_core import GlmFamily
from glmd.logger import get_logger
from glmd.netproto.codec import (
    Abort,
    BroadcastBeta,
    Hello,
    LocalFit,
    LocalScoreFisher,
    Message,
    Result,
    decode_message,
    encode_message,
)
from glmd.netproto.transport import Channel, Listener, Transport
from glmd.solver import FitOptions


log = get_logger(__name__)

# ABORT codes.
ABORT_PROTOCOL = 1
ABORT_TRANSPORT = 2
ABORT_NUMERICAL = 3
ABORT_HANDSHAKE = 4


@dataclass(frozen=True, eq=False)
class ReportedFit:
    """A worker's round-1 report, shaped for the combination rules."""

    worker_id: int
    estimate: np.ndarray
    fisher_at_estimate: np.ndarray
    converged: bool
    iterations: int
    local_n: int


class _RoundFailure(Exception):
    def __init__(self, worker_id: Optional[int], error: BaseException, code: int, *, registered: bool = True) -> None:
        super().__init__(str(error))
        self.worker_id = worker_id
        self.error = error
        self.code = code
        # False when the offending channel never joined the session (handshake).
        self.registered = registered

    @property
    def skip(self) -> Optional[int]:
        return self.worker_id if self.registered else None


def _receive(channel: Channel, expected: Type[Message], timeout: float, worker_id: Optional[int]) -> Message:
    try:
        msg = decode_message(channel.recv(timeout))
    except ProtocolError as exc:
        raise _RoundFailure(worker_id, exc, ABORT_PROTOCOL) from exc
    except TransportError as exc:
        raise _RoundFailure(worker_id, exc, ABORT_TRANSPORT) from exc
    if isinstance(msg, Abort):
        error = WorkerAbortedError(f"aborted with code {msg.code}: {msg.message}", code=msg.code, worker_id=worker_id)
        raise _RoundFailure(worker_id, error, ABORT_TRANSPORT)
    if not isinstance(msg, expected):
        error = ProtocolError(f"expected {expected.__name__}, got {type(msg).__name__}", offset=5)
        raise _RoundFailure(worker_id, error, ABORT_PROTOCOL)
    return msg


def _abort_all(channels: Dict[int, Channel], code: int, message: str, skip: Optional[int] = None) -> None:
    frame = encode_message(Abort(code, message))
    for worker_id, channel in channels.items():
        if worker_id == skip:
            continue
        try:
            channel.send(frame)
        except GlmdError:
            log.debug("Could not deliver ABORT to worker %s", worker_id)
    for channel in channels.values():
        channel.close()


class _Session:
    def __init__(self, family: GlmFamily, expected_workers: int, transport: Transport) -> None:
        self.family = family
        self.expected = expected_workers
        self.transport = transport
        self.channels: Dict[int, Channel] = {}
        self.hellos: Dict[int, Hello] = {}

    # -- handshake ------------------------------------------------------------

    def handshake(self, listener: Listener) -> None:
        deadline = time.monotonic() + self.transport.handshake_timeout
        while len(self.channels) < self.expected:
            remaining = max(deadline - time.monotonic(), 0.0)
            try:
                channel = listener.accept(remaining)
            except TransportError as exc:
                raise _RoundFailure(None, exc, ABORT_HANDSHAKE) from exc
            try:
                hello = _receive(channel, Hello, max(deadline - time.monotonic(), 0.0), None)
            except _RoundFailure as failure:
                channel.close()
                failure.registered = False
                raise
            problem = self._check_hello(hello)
            if problem:
                _abort_all({hello.worker_id: channel}, ABORT_HANDSHAKE, problem)
                error = TransportError(problem, worker_id=hello.worker_id)
                raise _RoundFailure(hello.worker_id, error, ABORT_HANDSHAKE, registered=False)
            self.channels[hello.worker_id] = channel
            self.hellos[hello.worker_id] = hello
            log.debug("HELLO from worker %s (n_k=%s, p=%s)", hello.worker_id, hello.n_k, hello.p)

    def _check_hello(self, hello: Hello) -> Optional[str]:
        if hello.worker_id in self.channels:
            return f"duplicate worker_id {hello.worker_id}"
        if hello.worker_id >= self.expected:
            return f"worker_id {hello.worker_id} outside 0..{self.expected - 1}"
        if hello.family != self.family.code:
            return f"family code {hello.family} does not match {self.family.code} ({self.family.name})"
        if self.hellos:
            p = next(iter(self.hellos.values())).p
            if hello.p != p:
                return f"p={hello.p} does not match p={p}"
        if hello.n_k < 1 or hello.p < 1:
            return f"empty shard (n_k={hello.n_k}, p={hello.p})"
        return None

    @property
    def p(self) -> int:
        return next(iter(self.hellos.values())).p

    @property
    def order(self) -> List[int]:
        return sorted(self.channels)

    # -- rounds ---------------------------------------------------------------

    def gather(self, expected: Type[Message]) -> List[Message]:
        """Barrier: one message of type *expected* from every worker, in worker_id order."""

        with ThreadPoolExecutor(max_workers=len(self.channels), thread_name_prefix="glmd-recv") as pool:
            futures = {
                pool.submit(_receive, self.channels[wid], expected, self.transport.round_timeout, wid): wid
                for wid in self.order
            }
            done, _ = wait(futures, return_when=FIRST_EXCEPTION)
            failed = [f for f in done if f.exception() is not None]
            if failed:
                failure = failed[0].exception()
                assert isinstance(failure, _RoundFailure)
                # Unblock the pending receives before the pool joins them.
                _abort_all(self.channels, failure.code, str(failure.error), skip=failure.skip)
                raise failure
            by_worker = {futures[f]: f.result() for f in done}
        return [by_worker[wid] for wid in self.order]

    def broadcast(self, msg: Message) -> None:
        frame = encode_message(msg)
        for wid in self.order:
            try:
                self.channels[wid].send(frame)
            except TransportError as exc:
                raise _RoundFailure(wid, exc, ABORT_TRANSPORT) from exc

    def check_dimension(self, wid: int, length: int, what: str) -> None:
        if length != self.p:
            error = ProtocolError(f"{what} from worker {wid} has length {length}, expected p={self.p}", offset=0)
            raise _RoundFailure(wid, error, ABORT_PROTOCOL)

    def wire_bytes(self) -> int:
        return sum(ch.bytes_sent + ch.bytes_received for ch in self.channels.values())


def coordinator_run(
    family: GlmFamily,
    expected_workers: int,
    opts: Optional[FitOptions],
    method: Union[str, Method],
    listener: Union[Transport, Listener],
) -> DistributedEstimate:
    """Drive one distributed estimation job and return its result.

    *listener* is either a :class:`Transport` (a listener is opened and closed
    here) or an already-open :class:`Listener`.  Any failure is broadcast to
    the remaining workers as ABORT before it is raised: transport and protocol
    problems as :class:`TransportError` naming the worker, numerical ones as
    the original :class:`NumericalError`.
    """

    method = Method(method)
    if method is Method.GLOBAL:
        raise ArgumentError("the global fit does not run over a transport")
    if expected_workers < 1:
        raise ArgumentError(f"expected_workers must be >= 1, got {expected_workers}")

    owned = isinstance(listener, Transport)
    active = listener.listen() if owned else listener
    session = _Session(family, expected_workers, active.transport)
    log.info(
        "Coordinating %s job: family=%s K=%d (worker max_iterations=%s)",
        method.value,
        family.name,
        expected_workers,
        (opts or FitOptions()).max_iterations,
    )

    try:
        session.handshake(active)

        # Round 1: local MLEs.
        reports: List[ReportedFit] = []
        for wid, msg in zip(session.order, session.gather(LocalFit)):
            session.check_dimension(wid, len(msg.beta), "LOCAL_FIT")
            reports.append(
                ReportedFit(wid, msg.beta, msg.fisher, msg.converged, msg.iterations, session.hellos[wid].n_k)
            )
        local_convergence = tuple(r.converged for r in reports)
        beta_bar = weighted_average(reports)
        global_fisher = None

        if method is Method.AVERAGE:
            estimate = beta_bar
        elif method is Method.AEE:
            estimate = aee_combine(reports).estimate
        else:
            session.broadcast(BroadcastBeta(beta_bar))
            # Round 2: local score and Fisher information at beta_bar.
            replies = session.gather(LocalScoreFisher)
            for wid, msg in zip(session.order, replies):
                session.check_dimension(wid, len(msg.score), "LOCAL_SCORE_FISHER")
            scores = [m.score for m in replies]
            if method is Method.ONE_STEP:
                estimate, global_fisher = one_step_combine(beta_bar, scores, [m.fisher for m in replies])
            else:
                n_total = sum(r.local_n for r in reports)
                estimate = csl_combine(beta_bar, scores, replies[0].fisher, n_total, reports[0].local_n)

        session.broadcast(Result(METHOD_CODES[method], estimate))
        wire_bytes = session.wire_bytes()
        log.info("%s job finished: K=%d wire_bytes=%d", method.value, expected_workers, wire_bytes)
        for channel in session.channels.values():
            channel.close()
        return DistributedEstimate(
            method=method,
            estimate=estimate,
            global_fisher=global_fisher,
            rounds_of_communication=ROUNDS_OF_COMMUNICATION[method],
            local_convergence=local_convergence,
            wire_bytes=wire_bytes,
        )
    except _RoundFailure as failure:
        _abort_all(session.channels, failure.code, str(failure.error), skip=failure.skip)
        log.error("Job aborted (worker %s): %s", failure.worker_id, failure.error)
        error = failure.error
        if isinstance(error, TransportError) and (error.worker_id is not None or failure.worker_id is None):
            raise error from None
        raise TransportError(str(error), worker_id=failure.worker_id) from error
    except NumericalError as exc:
        _abort_all(session.channels, ABORT_NUMERICAL, str(exc))
        log.error("Job aborted on numerical failure: %s", exc)
        raise
    finally:
        if owned:
            active.close()
