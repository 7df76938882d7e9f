"""Actor workers, the learner loop, and the orchestration that joins them.

Actors collect with a local copy of the policy and pull newer weights every
``poll_every`` steps. The learner consumes the shared inbound queue in
arrival order: each transition goes into replay and then triggers exactly
the updates and evaluations the single-process loop would schedule for that
step. In lockstep mode the single actor asks for weights after every
transition, so it always acts with the same parameters ``train`` would use.
"""

from __future__ import annotations

import logging
import multiprocessing
import threading
import time
from dataclasses import dataclass, field

from ..agent import policy_from_tensors
from ..config import Config, loads_config
from ..training import Collector, LearnerCore, RunWriter, networks_for, schedule_for
from .transport import ChannelClosed, InprocHub, PeerLost, SocketHub, SocketLink
from .wire import (PROTOCOL_VERSION, Hello, ProtocolError, Shutdown, TransitionMsg,
                   WeightsRequest, WeightsSnapshot)

log = logging.getLogger(__name__)

REPLY_TIMEOUT = 60.0


@dataclass(frozen=True)
class WeightVersion:
    version: int
    step: int


@dataclass
class ActorReport:
    worker: int
    sent: int = 0
    versions: list = field(default_factory=list)
    cause: str = "shutdown"


@dataclass
class Audit:
    """Per-worker sequence bookkeeping on the learner side."""

    expected: dict = field(default_factory=dict)
    gaps: int = 0
    duplicates: int = 0
    reported: dict = field(default_factory=dict)

    def observe(self, worker: int, seq: int):
        nxt = self.expected.get(worker, 0)
        if seq < nxt:
            self.duplicates += 1
        else:
            self.gaps += seq - nxt
            self.expected[worker] = seq + 1

    def received(self, worker: int) -> int:
        return self.expected.get(worker, 0)

    @property
    def clean(self) -> bool:
        missing = any(self.reported[w] != self.received(w) for w in self.reported)
        return self.gaps == 0 and self.duplicates == 0 and not missing


@dataclass
class LearnerReport:
    rows: list
    updates: int
    skipped: int
    versions: list
    audit: Audit
    lost: dict
    actors: dict = field(default_factory=dict)


def _handshake(link, worker):
    link.send(Hello(worker))
    reply = link.recv(timeout=REPLY_TIMEOUT)
    if not isinstance(reply, Hello):
        raise ProtocolError(f"expected HELLO from learner, got {type(reply).__name__}")
    if reply.protocol != PROTOCOL_VERSION:
        raise ProtocolError(f"learner speaks protocol {reply.protocol}, "
                            f"this worker speaks {PROTOCOL_VERSION}")


def _await_weights(link, worker, have):
    """Request weights; returns a snapshot, or None if the learner said SHUTDOWN."""
    link.send(WeightsRequest(worker, have))
    while True:
        msg = link.recv(timeout=REPLY_TIMEOUT)
        if msg is None:
            raise ChannelClosed("learner did not answer a weights request")
        if isinstance(msg, Shutdown):
            return None
        if isinstance(msg, WeightsSnapshot):
            return msg
        raise ProtocolError(f"unexpected {type(msg).__name__} while waiting for weights")


def actor_loop(config: Config, worker: int, link, lockstep: bool = False) -> ActorReport:
    """Collect transitions until the learner sends SHUTDOWN."""
    report = ActorReport(worker)
    collector = Collector(config, worker)
    nets = networks_for(config, collector.env)
    schedule = schedule_for(config)
    _handshake(link, worker)
    version, policy, t = 0, None, 0
    while True:
        if policy is None or lockstep or t % config.poll_every == 0:
            snap = _await_weights(link, worker, version)
            if snap is None:
                break
            if snap.version < version:
                raise ProtocolError(f"weights went back from version {version} to {snap.version}")
            if snap.version > version or policy is None:
                version = snap.version
                policy = policy_from_tensors(nets, snap.tensors, schedule, config.warmup_steps)
                report.versions.append(version)
        elif isinstance(link.recv(timeout=0), Shutdown):
            break
        tr = collector.step(policy, t)
        link.send(TransitionMsg(t, tr))
        t += 1
        report.sent = t
    link.send(Shutdown(worker, report.sent, "ack"))
    return report


class Learner:
    """Learner state machine driven by inbound messages."""

    def __init__(self, config: Config, hub, workers: int, out_dir=None):
        self.config = config
        self.hub = hub
        self.workers = workers
        # lockstep needs the actor to see every update, whatever the cadence
        self.publish_every = 1 if config.lockstep else config.publish_every
        self.core = LearnerCore.create(config)
        self.writer = RunWriter(out_dir, config) if out_dir is not None else None
        self.t = 0
        self.updates = 0
        self.since_publish = 0
        self.audit = Audit()
        self.versions = []
        self.peers = {}
        self.finished_peers = set()
        self.lost = {}
        self.done = False
        self._publish()
        if config.agent_steps == 0:
            self._finish()

    def _publish(self):
        version = WeightVersion(len(self.versions) + 1, self.t)
        self.versions.append(version)
        self.snapshot = WeightsSnapshot(version.version, version.step,
                                        self.core.agent.policy_tensors())

    def _finish(self):
        self.done = True
        if self.writer is not None:
            self.writer.checkpoint(self.core.agent, self.config)
        for peer in self.peers:
            self._reply(peer, Shutdown(reason="done"))

    def _reply(self, peer, msg):
        try:
            self.hub.send(peer, msg)
        except ChannelClosed as exc:
            log.debug("reply to peer %s dropped: %s", peer, exc)

    def _on_transition(self, msg: TransitionMsg):
        tr = msg.transition
        self.audit.observe(tr.writer, msg.seq)
        self.core.replay.push(tr)
        if self.done:
            return
        c = self.config
        updates, row = self.core.on_transition(self.t)
        self.t += 1
        self.updates += updates
        self.since_publish += updates
        if self.since_publish >= self.publish_every:
            self.since_publish = 0
            self._publish()
        if self.writer is not None:
            if row is not None:
                self.writer.row(row)
            if c.checkpoint_every and self.t % c.checkpoint_every == 0:
                self.writer.checkpoint(self.core.agent, c, f"checkpoint_{self.t}.d3rq")
        if self.t >= c.agent_steps:
            self._finish()

    def handle(self, peer, msg):
        if isinstance(msg, TransitionMsg):
            self._on_transition(msg)
        elif isinstance(msg, WeightsRequest):
            self._reply(peer, Shutdown(reason="done") if self.done else self.snapshot)
        elif isinstance(msg, Hello):
            if msg.protocol != PROTOCOL_VERSION:
                self._reply(peer, Hello(msg.worker))
                raise ProtocolError(f"worker {msg.worker} speaks protocol {msg.protocol}")
            self.peers[peer] = msg.worker
            self._reply(peer, Hello(msg.worker))
            if self.done:
                self._reply(peer, Shutdown(reason="done"))
        elif isinstance(msg, Shutdown):
            self.audit.reported[msg.worker] = msg.sent
            self.finished_peers.add(peer)
        elif isinstance(msg, PeerLost):
            if peer not in self.finished_peers:
                self.lost[self.peers.get(peer, peer)] = msg.reason
                self.finished_peers.add(peer)
        else:
            raise ProtocolError(f"learner cannot handle {type(msg).__name__}")

    @property
    def settled(self) -> bool:
        return self.done and len(self.finished_peers) >= self.workers

    def report(self) -> LearnerReport:
        agent = self.core.agent
        return LearnerReport(self.core.rows, self.updates, agent.skipped_updates, self.versions,
                             self.audit, self.lost)


def learner_loop(config: Config, hub, workers: int, out_dir=None, alive=None,
                 idle_timeout: float = 300.0) -> LearnerReport:
    """Serve ``workers`` actors until training is done and every actor has left."""
    learner = Learner(config, hub, workers, out_dir)
    last = time.monotonic()
    while not learner.settled:
        item = hub.recv(timeout=0.5)
        if item is None:
            if alive is not None and not alive() and len(learner.finished_peers) < workers:
                raise RuntimeError("all actor workers exited before the run finished")
            if time.monotonic() - last > idle_timeout:
                raise RuntimeError(f"no message from any actor for {idle_timeout:.0f} s")
            continue
        last = time.monotonic()
        learner.handle(*item)
    return learner.report()


# -- orchestration -------------------------------------------------------------

def _thread_actor(config, worker, hub, lockstep, reports):
    link = hub.connect(worker)
    try:
        reports[worker] = actor_loop(config, worker, link, lockstep)
    except Exception as exc:  # reported to the learner, which decides what to do
        log.error("actor %d failed: %s", worker, exc)
        reports[worker] = ActorReport(worker, cause=f"{type(exc).__name__}: {exc}")
        hub.lost(worker, str(exc))


def socket_actor_main(config_text: str, worker: int, endpoint: str, lockstep: bool = False):
    """Entry point of an actor process connecting over TCP."""
    config = loads_config(config_text)
    link = SocketLink(endpoint)
    try:
        report = actor_loop(config, worker, link, lockstep)
    finally:
        link.close()
    return report


def run_distributed(config: Config, out_dir=None) -> LearnerReport:
    """One learner plus ``config.workers`` actors over the configured transport."""
    workers = config.workers
    lockstep = config.lockstep
    if lockstep and workers != 1:
        raise ValueError("lockstep scheduling needs exactly one worker")
    if config.transport == "inproc":
        hub = InprocHub()
        reports = {}
        threads = [threading.Thread(target=_thread_actor, args=(config, w, hub, lockstep, reports),
                                    daemon=True, name=f"actor-{w}") for w in range(workers)]
        for th in threads:
            th.start()
        try:
            result = learner_loop(config, hub, workers, out_dir,
                                  alive=lambda: any(th.is_alive() for th in threads))
        finally:
            for th in threads:
                th.join(timeout=10)
        result.actors = reports
        return result
    hub = SocketHub(config.endpoint)
    ctx = multiprocessing.get_context("spawn")
    procs = [ctx.Process(target=socket_actor_main, args=(config.dumps(), w, hub.endpoint, lockstep),
                         name=f"actor-{w}") for w in range(workers)]
    for p in procs:
        p.start()
    try:
        result = learner_loop(config, hub, workers, out_dir,
                              alive=lambda: any(p.is_alive() for p in procs))
    finally:
        for p in procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
        hub.close()
    result.actors = {}
    return result
