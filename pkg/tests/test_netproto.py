import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from glmd.datagen import SimDesign, gen_trial_shards
from glmd.distributed import Method, Shard, run_distributed
from glmd.errors import ArgumentError, SingularFisherError, TransportError, WorkerAbortedError
from glmd.glm_core import LOGISTIC, POISSON, PROBIT, Dataset
from glmd.netproto.codec import (
    Abort,
    BroadcastBeta,
    Hello,
    LocalFit,
    LocalScoreFisher,
    MsgType,
    Result,
    decode_message,
    encode_message,
)
from glmd.netproto.coordinator import ABORT_HANDSHAKE, ABORT_PROTOCOL, coordinator_run
from glmd.netproto.transport import Transport, parse_endpoint
from glmd.netproto.worker import ABORT_NUMERICAL, EXIT_NUMERICAL, EXIT_OK, EXIT_TRANSPORT, worker_run
from glmd.solver import FitOptions

TIMEOUTS = {"handshake_timeout": 10.0, "round_timeout": 10.0}


def _shards(model="logistic", n=800, p=3, k=4, seed=17):
    return gen_trial_shards(SimDesign(model, n=n, p=p, seed=seed, K=k), 0)


def _in_process():
    return Transport.in_process(**TIMEOUTS)


def _loopback():
    return Transport.tcp("127.0.0.1:0", **TIMEOUTS)


# ---------------------------------------------------------------------------
# transport equivalence
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("method", [Method.AVERAGE, Method.AEE, Method.ONE_STEP, Method.CSL_ONE_STEP])
def test_socket_and_in_process_results_are_bit_identical(method):
    shards = _shards()
    local = run_distributed(method, LOGISTIC, shards, transport=_in_process())
    remote = run_distributed(method, LOGISTIC, shards, transport=_loopback())
    assert_array_equal(local.estimate, remote.estimate)
    assert local.local_convergence == remote.local_convergence
    assert local.wire_bytes == remote.wire_bytes


def test_single_worker_loopback_matches_in_process():
    shards = _shards(k=1, n=300)
    remote = run_distributed(Method.ONE_STEP, LOGISTIC, shards, transport=_loopback())
    assert_array_equal(remote.estimate, run_distributed(Method.ONE_STEP, LOGISTIC, shards).estimate)


def test_transport_can_be_reused_across_jobs():
    transport = _in_process()
    shards = _shards(k=2, n=200)
    first = run_distributed(Method.ONE_STEP, LOGISTIC, shards, transport=transport)
    second = run_distributed(Method.ONE_STEP, LOGISTIC, shards, transport=transport)
    assert_array_equal(first.estimate, second.estimate)


# ---------------------------------------------------------------------------
# message counts
# ---------------------------------------------------------------------------


def _coordinate_with_recording(method, shards, family=LOGISTIC):
    """Run a job while keeping every channel the coordinator accepted."""

    transport = _in_process()
    listener = transport.listen()
    accepted = []
    original_accept = listener.accept

    def recording_accept(timeout):
        channel = original_accept(timeout)
        accepted.append(channel)
        return channel

    listener.accept = recording_accept
    with ThreadPoolExecutor(max_workers=len(shards)) as pool:
        futures = [pool.submit(worker_run, family, s, FitOptions(), listener.transport) for s in shards]
        try:
            result = coordinator_run(family, len(shards), FitOptions(), method, listener)
        finally:
            listener.close()
        statuses = [f.result() for f in futures]
    return result, accepted, statuses


def test_one_step_exchanges_exactly_two_rounds():
    shards = _shards()
    result, channels, statuses = _coordinate_with_recording(Method.ONE_STEP, shards)
    assert statuses == [EXIT_OK] * 4
    assert len(channels) == 4
    for channel in channels:
        assert dict(channel.frames_received) == {MsgType.HELLO: 1, MsgType.LOCAL_FIT: 1, MsgType.LOCAL_SCORE_FISHER: 1}
        assert dict(channel.frames_sent) == {MsgType.BROADCAST_BETA: 1, MsgType.RESULT: 1}
    p = shards[0].data.p
    per_worker = (10 + 17) + (10 + 5 + 8 * (p + p * p)) + (10 + 8 * p) + (10 + 8 * (p + p * p)) + (10 + 1 + 8 * p)
    assert result.wire_bytes == 4 * per_worker


@pytest.mark.parametrize("method", [Method.AVERAGE, Method.AEE])
def test_single_round_methods_skip_the_broadcast(method):
    result, channels, statuses = _coordinate_with_recording(method, _shards(k=3, n=300))
    assert statuses == [EXIT_OK] * 3
    assert result.rounds_of_communication == 1
    for channel in channels:
        assert dict(channel.frames_sent) == {MsgType.RESULT: 1}
        assert MsgType.LOCAL_SCORE_FISHER not in channel.frames_received


def test_coordinator_rejects_global_and_empty_jobs():
    with pytest.raises(ArgumentError):
        coordinator_run(LOGISTIC, 2, None, Method.GLOBAL, _in_process())
    with pytest.raises(ArgumentError):
        coordinator_run(LOGISTIC, 0, None, Method.ONE_STEP, _in_process())


# ---------------------------------------------------------------------------
# worker state machine against a scripted coordinator
# ---------------------------------------------------------------------------


def _scripted_worker(shard, family=LOGISTIC):
    transport = _in_process()
    listener = transport.listen()
    status = {}
    thread = threading.Thread(
        target=lambda: status.setdefault("code", worker_run(family, shard, FitOptions(), listener.transport))
    )
    thread.start()
    channel = listener.accept(10.0)
    return channel, thread, status, listener


def test_worker_answers_broadcast_and_exits_on_result():
    shard = _shards(k=1, n=200)[0]
    channel, thread, status, listener = _scripted_worker(shard)
    hello = decode_message(channel.recv(10.0))
    assert isinstance(hello, Hello) and hello.n_k == 200 and hello.p == 3 and hello.family == LOGISTIC.code
    fit = decode_message(channel.recv(10.0))
    assert isinstance(fit, LocalFit) and fit.converged
    channel.send(encode_message(BroadcastBeta(np.zeros(3))))
    reply = decode_message(channel.recv(10.0))
    assert isinstance(reply, LocalScoreFisher)
    assert reply.fisher.shape == (3, 3)
    channel.send(encode_message(Result(2, np.zeros(3))))
    thread.join(10.0)
    listener.close()
    assert status["code"] == EXIT_OK


def test_worker_rejects_broadcast_of_wrong_dimension():
    shard = _shards(k=1, n=200)[0]
    channel, thread, status, listener = _scripted_worker(shard)
    decode_message(channel.recv(10.0))
    decode_message(channel.recv(10.0))
    channel.send(encode_message(BroadcastBeta(np.zeros(5))))
    abort = decode_message(channel.recv(10.0))
    thread.join(10.0)
    listener.close()
    assert isinstance(abort, Abort)
    assert abort.code == ABORT_PROTOCOL
    assert status["code"] == EXIT_TRANSPORT


def _with_invalid_response(shard):
    response = np.array(shard.data.response)
    response[0] = 2.0
    return Shard(shard.worker_id, Dataset(shard.data.design, response))


def test_worker_aborts_when_its_shard_cannot_be_fitted():
    channel, thread, status, listener = _scripted_worker(_with_invalid_response(_shards(k=1, n=200)[0]))
    decode_message(channel.recv(10.0))
    abort = decode_message(channel.recv(10.0))
    thread.join(10.0)
    listener.close()
    assert isinstance(abort, Abort)
    assert abort.code == ABORT_NUMERICAL
    assert "worker 0" in abort.message
    assert status["code"] == EXIT_NUMERICAL


def test_invalid_shard_surfaces_as_worker_abort_from_the_job():
    shards = _shards(k=3, n=600)
    shards[1] = _with_invalid_response(shards[1])
    with pytest.raises(WorkerAbortedError) as info:
        run_distributed(Method.ONE_STEP, LOGISTIC, shards, transport=_in_process())
    assert info.value.worker_id == 1
    assert info.value.code == ABORT_NUMERICAL


def test_worker_stops_silently_after_abort():
    shard = _shards(k=1, n=200)[0]
    channel, thread, status, listener = _scripted_worker(shard)
    decode_message(channel.recv(10.0))
    decode_message(channel.recv(10.0))
    channel.send(encode_message(Abort(3, "aggregate Fisher information is singular")))
    thread.join(10.0)
    assert status["code"] == EXIT_TRANSPORT
    # The only thing left on the wire is the closed channel.
    with pytest.raises(TransportError, match="closed"):
        channel.recv(1.0)
    listener.close()


def test_worker_without_coordinator_exits_with_transport_status():
    transport = Transport.tcp("127.0.0.1:1", handshake_timeout=0.2, round_timeout=1.0)
    assert worker_run(LOGISTIC, _shards(k=1, n=50)[0], None, transport) == EXIT_TRANSPORT


# ---------------------------------------------------------------------------
# coordinator failure handling against scripted workers
# ---------------------------------------------------------------------------


def _run_coordinator_with(fake_workers, real_shards=(), family=LOGISTIC, method=Method.ONE_STEP, k=None):
    transport = _in_process()
    listener = transport.listen()
    threads = []
    statuses = []
    for shard in real_shards:
        t = threading.Thread(
            target=lambda s=shard: statuses.append(worker_run(family, s, FitOptions(), listener.transport))
        )
        threads.append(t)
    for fake in fake_workers:
        threads.append(threading.Thread(target=fake, args=(listener.transport,)))
    for t in threads:
        t.start()
    try:
        return coordinator_run(family, k or len(threads), FitOptions(), method, listener)
    finally:
        listener.close()
        for t in threads:
            t.join(10.0)
        _run_coordinator_with.statuses = statuses


def test_worker_disconnect_names_the_worker():
    real = _shards(k=2, n=400)[0]

    def disconnecting_worker(transport):
        channel = transport.dial()
        channel.send(encode_message(Hello(1, 200, 3, LOGISTIC.code)))
        channel.close()

    with pytest.raises(TransportError) as info:
        _run_coordinator_with([disconnecting_worker], [real])
    assert info.value.worker_id == 1
    assert "worker 1" in str(info.value)
    assert _run_coordinator_with.statuses == [EXIT_TRANSPORT]


def test_duplicate_worker_id_aborts_handshake():
    shard = _shards(k=2, n=400)[0]
    received = []

    def impostor(transport):
        channel = transport.dial()
        channel.send(encode_message(Hello(0, 200, 3, LOGISTIC.code)))
        try:
            received.append(decode_message(channel.recv(10.0)))
        except TransportError:
            pass

    with pytest.raises(TransportError):
        _run_coordinator_with([impostor, impostor], [shard], k=2)
    aborts = [m for m in received if isinstance(m, Abort)]
    assert aborts and all(m.code == ABORT_HANDSHAKE for m in aborts)


def test_family_mismatch_is_rejected():
    def poisson_worker(transport):
        channel = transport.dial()
        channel.send(encode_message(Hello(0, 10, 3, POISSON.code)))
        try:
            channel.recv(10.0)
        except TransportError:
            pass

    with pytest.raises(TransportError, match="family code"):
        _run_coordinator_with([poisson_worker], k=1)


def test_local_fit_of_wrong_dimension_is_a_protocol_failure():
    def lying_worker(transport):
        channel = transport.dial()
        channel.send(encode_message(Hello(0, 10, 3, PROBIT.code)))
        channel.send(encode_message(LocalFit(True, 1, np.zeros(2), np.eye(2))))
        try:
            channel.recv(10.0)
        except TransportError:
            pass

    with pytest.raises(TransportError) as info:
        _run_coordinator_with([lying_worker], family=PROBIT, k=1)
    assert info.value.worker_id == 0


def test_handshake_timeout():
    transport = Transport.in_process(handshake_timeout=0.2, round_timeout=1.0)
    with pytest.raises(TransportError, match="no worker connected"):
        coordinator_run(LOGISTIC, 1, None, Method.ONE_STEP, transport)


def test_singular_aggregate_fisher_is_numerical():
    def worker(transport, wid):
        channel = transport.dial()
        channel.send(encode_message(Hello(wid, 10, 2, LOGISTIC.code)))
        channel.send(encode_message(LocalFit(True, 1, np.zeros(2), np.zeros((2, 2)))))
        msg = decode_message(channel.recv(10.0))
        worker.seen.append(msg)

    worker.seen = []
    fakes = [lambda t, w=w: worker(t, w) for w in range(2)]
    with pytest.raises(SingularFisherError):
        _run_coordinator_with(fakes, method=Method.AEE, k=2)
    assert [m.code for m in worker.seen] == [3, 3]


# ---------------------------------------------------------------------------
# endpoints and timeouts
# ---------------------------------------------------------------------------


def test_parse_endpoint():
    assert parse_endpoint("127.0.0.1:5000") == ("127.0.0.1", 5000)
    assert parse_endpoint("[::1]:0") == ("::1", 0)
    for bad in ("localhost", ":80", "host:port", "host:70000"):
        with pytest.raises(ArgumentError):
            parse_endpoint(bad)


def test_timeouts_come_from_environment(monkeypatch):
    monkeypatch.setenv("GLMD_HANDSHAKE_TIMEOUT_S", "2.5")
    monkeypatch.setenv("GLMD_ROUND_TIMEOUT_S", "not-a-number")
    transport = Transport.in_process()
    assert transport.handshake_timeout == 2.5
    assert transport.round_timeout == 300.0
