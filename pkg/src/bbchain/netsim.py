"""Round-lockstep simulator for pipelined broadcast invocations.

Each global round: deliver last round's messages, let every protocol node
ingest them and run both forwarding phases for each active invocation (in
invocation order), then let the adversary speak. Messages sent in round T are
readable in round T+1; bad honest-to-honest edges drop them.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .adversary import AdversaryContext, Strategy, _random_bits, make_strategy
from .analysis import BandwidthParams, per_round_send_bound
from .crypto_kit import SimulatedScheme
from .overlaybb import MAX_MESSAGE_BITS, BroadcastInstance, ProtocolParams
from .topology import Topology, sample_bad_edges


class SimulationError(RuntimeError):
    pass


@dataclass
class InvocationSpec:
    instance: int
    start: int
    params: ProtocolParams
    committee: object
    strategy: Strategy
    obj: bytes | None = None  # honest broadcaster's object; drawn at random if None
    obj_bits: int | None = None
    object_factory: object = None  # what a malicious broadcaster's objects look like


@dataclass
class InvocationOutcome:
    instance: int
    start: int
    params: ProtocolParams
    committee: object
    outputs: dict[int, bytes | None]
    finalized_round: int
    broadcaster_honest: bool
    committee_has_honest: bool
    sent_object: bytes | None
    root_accept_round: dict[int, dict[bytes, int]]
    frag_accept_round: dict[int, int | None]
    xs_first_sent: dict[int, int | None]
    max_round_ops: dict[str, int]
    blacklist_events: int
    strategy: Strategy | None = None

    @property
    def agreement(self) -> bool:
        return len(set(self.outputs.values())) <= 1

    @property
    def validity(self) -> bool:
        return all(v == self.sent_object for v in self.outputs.values())

    @property
    def delivered(self) -> bool:
        return all(v is not None for v in self.outputs.values())


@dataclass
class _Running:
    spec: InvocationSpec
    instances: dict[int, BroadcastInstance]
    ctx: AdversaryContext
    sent_object: bytes | None


class Simulation:
    def __init__(self, topology: Topology, seed: int, p_bad: float = 0.0, bad_mode: str = "fixed",
                 d_limit: int | None = None, trace: bool = False):
        if bad_mode not in ("fixed", "per-round"):
            raise ValueError(f"bad_mode must be 'fixed' or 'per-round', got {bad_mode!r}")
        self.topology = topology
        self.seed = seed
        self.scheme = SimulatedScheme()
        self.p_bad = p_bad
        self.bad_mode = bad_mode
        self.d_limit = topology.d if d_limit is None else d_limit
        self._edge_rng = np.random.default_rng([seed, 3])
        self.bad_edges = sample_bad_edges(topology, p_bad, self.d_limit, self._edge_rng)
        self.trace = trace
        self.records: list[dict] = []
        self.round = 0
        self.mailbox: dict[int, list] = defaultdict(list)
        self.pending: list[InvocationSpec] = []
        self.active: dict[int, _Running] = {}
        self.outcomes: list[InvocationOutcome] = []
        self.blacklists: dict[int, set] = {v: set() for v in range(topology.n)}
        self.sent_bits: list[dict[int, int]] = []  # per round, honest node -> bits
        self.round_bound: list[int] = []  # per round, sum of Y over active invocations
        self.oversize_messages = 0
        self._honest = topology.honest

    def schedule(self, spec: InvocationSpec) -> None:
        self.pending.append(spec)
        self.pending.sort(key=lambda s: (s.start, s.instance))

    # ------------------------------------------------------------ lifecycle

    def _start(self, spec: InvocationSpec) -> None:
        topo = self.topology
        b = spec.committee.broadcaster
        strategy = spec.strategy
        protocol_nodes = list(self._honest)
        if strategy.runs_protocol:
            protocol_nodes = list(range(topo.n))
        instances = {v: BroadcastInstance(v, spec.params, spec.committee, self.scheme, self.blacklists[v])
                     for v in protocol_nodes}
        sent = None
        if b in instances:
            obj, nbits = spec.obj, spec.obj_bits
            if obj is None:
                nbits = spec.params.l
                obj = _random_bits(np.random.default_rng([self.seed, 1, spec.instance]), nbits)
            instances[b].start_as_broadcaster(obj, np.random.default_rng([self.seed, 4, spec.instance]), nbits)
            if topo.is_honest(b):
                sent = obj
        ctx = AdversaryContext(topo, spec.params, spec.committee, self.scheme,
                               np.random.default_rng([self.seed, 2, spec.instance]), spec.instance,
                               spec.object_factory)
        strategy.setup(ctx)
        self.active[spec.instance] = _Running(spec, instances, ctx, sent)

    def _finish(self, run: _Running) -> None:
        spec = run.spec
        honest = [v for v in self._honest]
        outputs, roots, frags, xs, ops = {}, {}, {}, {}, defaultdict(int)
        events = 0
        for v in honest:
            inst = run.instances[v]
            outputs[v] = inst.finalize()
            roots[v] = dict(inst.root_accept_round)
            frags[v] = inst.frag_accept_round
            xs[v] = inst.xs_first_sent
            events += len(inst.blacklisted)
            for r in inst.round_ops:
                for k, val in r.as_dict().items():
                    ops[k] = max(ops[k], val)
        topo = self.topology
        self.outcomes.append(InvocationOutcome(
            instance=spec.instance, start=spec.start, params=spec.params, committee=spec.committee,
            outputs=outputs, finalized_round=self.round + 1 - spec.start,
            broadcaster_honest=topo.is_honest(spec.committee.broadcaster),
            committee_has_honest=any(topo.is_honest(v) for v in spec.committee.members),
            sent_object=run.sent_object, root_accept_round=roots, frag_accept_round=frags,
            xs_first_sent=xs, max_round_ops=dict(ops), blacklist_events=events, strategy=spec.strategy))

    # ------------------------------------------------------------ round

    def _edge_good(self, u: int, v: int) -> bool:
        return (u, v) not in self.bad_edges

    def step(self) -> None:
        T = self.round
        topo = self.topology
        while self.pending and self.pending[0].start == T:
            self._start(self.pending.pop(0))
        if self.bad_mode == "per-round" and self.p_bad > 0:
            self.bad_edges = sample_bad_edges(topo, self.p_bad, self.d_limit, self._edge_rng)

        order = sorted(self.active)
        inbox: dict[int, list] = defaultdict(list)
        for src, dst, inst, msgs in self.mailbox.pop(T, ()):
            inbox[dst].append((src, inst, msgs))
        for run in self.active.values():
            run.ctx.t = T - run.spec.start

        bits_now: dict[int, int] = {}
        bound_now = 0
        for k in order:
            run = self.active[k]
            bound_now += self._bound(run.spec.params)
        nodes = range(topo.n)
        for v in nodes:
            honest = topo.is_honest(v)
            for src, k, msgs in inbox.get(v, ()):
                run = self.active.get(k)
                if run is not None and v in run.instances:
                    run.instances[v].ingest(msgs, src)
            total = 0
            for k in order:
                run = self.active[k]
                inst = run.instances.get(v)
                if inst is None:
                    continue
                t = T - run.spec.start
                out = inst.step(t)
                if not honest:
                    out = run.spec.strategy.filter_outgoing(v, out, run.ctx)
                if not out:
                    if self.trace and honest:
                        self._record(T, v, k, 0, inst)
                    continue
                nb = out.wire_bits(run.spec.params)
                if honest:
                    if nb > MAX_MESSAGE_BITS:
                        self.oversize_messages += 1
                    total += nb * len(topo.adjacency[v])
                    if self.trace:
                        self._record(T, v, k, nb * len(topo.adjacency[v]), inst)
                observed = False
                for u in topo.adjacency[v]:
                    if topo.is_honest(u):
                        if honest and not self._edge_good(v, u):
                            continue
                    elif not observed:
                        run.ctx.observe(out)
                        observed = True
                    self.mailbox[T + 1].append((v, u, k, out))
            if honest:
                bits_now[v] = total

        for k in order:
            run = self.active[k]
            run.spec.strategy.act(T - run.spec.start, run.ctx)
            for src, dst, msgs in run.ctx.drain():
                if src not in topo.malicious or dst not in topo.adjacency[src]:
                    raise SimulationError(f"adversary used a non-edge {src}->{dst}")
                self.mailbox[T + 1].append((src, dst, k, msgs))

        self.sent_bits.append(bits_now)
        self.round_bound.append(bound_now)
        for k in order:
            run = self.active[k]
            if T - run.spec.start == run.spec.params.rounds - 1:
                self._finish(run)
                del self.active[k]
        self.round += 1

    def _bound(self, params: ProtocolParams) -> int:
        key = params
        cache = self.__dict__.setdefault("_bound_cache", {})
        if key not in cache:
            cache[key] = per_round_send_bound(BandwidthParams(
                w=self.topology.w, l=params.framed_bits, s=params.s, m=params.m, d=params.d,
                l_hash=params.l_hash, l_sig=params.l_sig, l_nonce=params.l_nonce)).Y
        return cache[key]

    def _record(self, T, v, k, bits, inst: BroadcastInstance) -> None:
        t = T - self.active[k].spec.start
        accepts = [r.hex()[:16] for r, rt in inst.root_accept_round.items() if rt == t]
        if inst.frag_accept_round == t:
            accepts.append("last-fragment")
        bl = [src for rt, src in inst.blacklisted if rt == t]
        self.records.append({"round": T, "node": v, "instance": k, "bits_sent": bits,
                             "bytes_sent": -(-bits // 8), "accepts": accepts, "blacklist": bl})

    def run(self) -> None:
        while self.pending or self.active:
            self.step()

    # ------------------------------------------------------------ metrics

    def bound_violations(self) -> list[tuple[int, int, int, int]]:
        """(round, node, bits, bound) for every honest round over the bound."""
        out = []
        for T, (bits, bound) in enumerate(zip(self.sent_bits, self.round_bound)):
            for v, b in bits.items():
                if b > bound:
                    out.append((T, v, b, bound))
        return out

    def peak_fraction(self) -> float:
        best = 0.0
        for bits, bound in zip(self.sent_bits, self.round_bound):
            if bound and bits:
                best = max(best, max(bits.values()) / bound)
        return best


@dataclass
class InvocationResult:
    outcome: InvocationOutcome
    sim: Simulation
    bound: int

    @property
    def outputs(self):
        return self.outcome.outputs

    def max_bits(self) -> int:
        return max((max(b.values(), default=0) for b in self.sim.sent_bits), default=0)


def run_invocation(topology: Topology, params: ProtocolParams, committee, strategy: Strategy | str,
                   seed: int, obj: bytes | None = None, obj_bits: int | None = None,
                   p_bad: float = 0.0, bad_mode: str = "fixed", trace: bool = False) -> InvocationResult:
    if isinstance(strategy, str):
        strategy = make_strategy(strategy)
    if params.d < topology.d:
        raise ValueError(f"protocol d={params.d} is below the honest diameter {topology.d}")
    sim = Simulation(topology, seed, p_bad=p_bad, bad_mode=bad_mode, d_limit=params.d, trace=trace)
    sim.schedule(InvocationSpec(0, 0, params, committee, strategy, obj, obj_bits))
    sim.run()
    (outcome,) = sim.outcomes
    return InvocationResult(outcome, sim, sim._bound(params))
