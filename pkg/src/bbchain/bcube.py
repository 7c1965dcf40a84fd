"""Blockchain layer: slots, committees, epoch beacons and pipelined invocations.

Time is one global round clock. Slot ``k`` starts its broadcast invocation at
round ``k * slot_period`` and confirms ``2dm + s`` rounds later. Epoch ``e``
covers slots ``e*rho .. (e+1)*rho - 1``; during it the nodes derive the beacon
that seeds the committees of epoch ``e + 1``:

* the nonces of the first ``tau`` blocks form the PoW challenge (time T2),
* honest nodes mine until T3 and then flood their first solution,
* the last ``tau`` slots that still confirm inside the epoch (starting at T4)
  carry candidates, and the first non-null one fixes the next beacon at T5.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .adversary import make_strategy
from .crypto_kit import hash1, hash2
from .netsim import InvocationSpec, Simulation
from .overlaybb import ProtocolParams
from .topology import Topology

NONCE_BYTES = 32
TOKEN_BYTES = 20
EMPTY_NONCE = bytes(NONCE_BYTES)
BLOCK_HEADER_BYTES = 8 + NONCE_BYTES + 1 + TOKEN_BYTES


class NotReady(RuntimeError):
    pass


class ScheduleError(ValueError):
    pass


# ---------------------------------------------------------------- committees

@dataclass(frozen=True)
class CoinDistribution:
    owners: tuple[int, ...]  # coin id -> owner node
    snapshot: int = 0

    @classmethod
    def one_coin_each(cls, n: int) -> "CoinDistribution":
        return cls(tuple(range(n)))

    def malicious_fraction(self, malicious) -> float:
        return sum(o in malicious for o in self.owners) / len(self.owners)


@dataclass(frozen=True)
class CommitteeSpec:
    slot: int
    coins: tuple[int, ...]
    members: Mapping[int, int] = field(hash=False)
    broadcaster: int = 0


def committee_from_coins(slot: int, coins: Sequence[int], dist: CoinDistribution) -> CommitteeSpec:
    members: dict[int, int] = {}
    for c in coins:
        owner = dist.owners[c]
        members[owner] = members.get(owner, 0) + 1
    return CommitteeSpec(slot, tuple(coins), members, dist.owners[coins[0]])


def select_committee(beacon: bytes, k: int, dist: CoinDistribution, m: int) -> CommitteeSpec:
    """Draw m coins with replacement from a hash1(k | beacon) keyed stream."""
    if not dist.owners:
        raise ValueError("empty coin distribution")
    ncoins = len(dist.owners)
    limit = (1 << 64) - (1 << 64) % ncoins  # rejection keeps the draw unbiased
    seed = struct.pack(">Q", k) + beacon
    coins: list[int] = []
    counter = 0
    while len(coins) < m:
        block = hash1(seed + struct.pack(">Q", counter))
        counter += 1
        for j in range(0, 32, 8):
            x = int.from_bytes(block[j:j + 8], "big")
            if x < limit and len(coins) < m:
                coins.append(x % ncoins)
    return committee_from_coins(k, coins, dist)


# ---------------------------------------------------------------- blocks

@dataclass(frozen=True)
class Block:
    slot: int
    payload: bytes
    nonce: bytes
    candidate: bytes | None = None

    def encode(self) -> bytes:
        cand = b"\x01" + self.candidate if self.candidate is not None else b"\x00" + bytes(TOKEN_BYTES)
        return struct.pack(">Q", self.slot) + self.nonce + cand + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Block | None":
        if len(data) < BLOCK_HEADER_BYTES:
            return None
        (slot,) = struct.unpack_from(">Q", data, 0)
        nonce = data[8:8 + NONCE_BYTES]
        flag = data[8 + NONCE_BYTES]
        token = data[9 + NONCE_BYTES:BLOCK_HEADER_BYTES]
        if flag not in (0, 1):
            return None
        return cls(slot, data[BLOCK_HEADER_BYTES:], nonce, token if flag else None)


def random_block(slot: int, payload_bytes: int, rng: np.random.Generator,
                 candidate: bytes | None = None) -> Block:
    return Block(slot, rng.bytes(payload_bytes), rng.bytes(NONCE_BYTES), candidate)


# ---------------------------------------------------------------- epochs

@dataclass(frozen=True)
class EpochSchedule:
    epoch: int
    T1: int
    T2: int
    T3: int
    T4: int
    T5: int
    challenge_slots: tuple[int, ...]
    candidate_slots: tuple[int, ...]


def epoch_schedule(e: int, rho: int, period: int, length: int, tau: int, d: int) -> EpochSchedule:
    """Markers of epoch ``e`` in rounds.

    Candidate slots are the last ``tau`` slots whose invocations end by T5;
    flooding starts 2d rounds before the first of them starts.
    """
    first = e * rho
    T1 = first * period
    T5 = (first + rho) * period
    T2 = (first + tau - 1) * period + length
    k_last = (T5 - length) // period
    cands = tuple(range(k_last - tau + 1, k_last + 1))
    T4 = cands[0] * period
    T3 = T4 - 2 * d
    if cands[0] < first + tau or T3 < T2:
        raise ScheduleError(
            f"epoch too short: challenge ready at round {T2} but flooding must start by {T3}; "
            "increase rho or the slot period")
    return EpochSchedule(e, T1, T2, T3, T4, T5, tuple(range(first, first + tau)), cands)


def assemble_challenge(chain: Sequence[Block | None], epoch: int, tau: int, rho: int) -> bytes:
    """Concatenate the nonces of the epoch's first tau blocks (slot order)."""
    first = epoch * rho
    if len(chain) < first + tau:
        raise NotReady(f"need slots {first}..{first + tau - 1} confirmed")
    out = []
    for k in range(first, first + tau):
        blk = chain[k]
        out.append(blk.nonce if blk is not None else EMPTY_NONCE)
    return b"".join(out)


def derive_beacon(challenge: bytes, candidates: Sequence[bytes | None], previous: bytes) -> bytes:
    for cand in candidates:
        if cand is not None:
            return hash2(challenge + cand)
    return previous


# ---------------------------------------------------------------- weak PoW

@dataclass(frozen=True)
class PowSolution:
    time: int
    token: bytes
    finder: int  # -1 for the adversary
    honest: bool


def simulate_pow(challenge: bytes, window: tuple[int, int], honest_nodes: Sequence[int],
                 honest_mean: float = 2.0, multiplier: float = 0.0,
                 adversary_window: tuple[int, int] | None = None, seed: int = 0,
                 predictable: bool = False) -> list[PowSolution]:
    """Timed solution events for one epoch.

    Honest nodes find Poisson(honest_mean) solutions uniformly over ``window``
    (challenge known .. flooding starts). The adversary mines at
    ``multiplier`` times the honest per-round rate over ``adversary_window``;
    solutions dated before the challenge existed are kept only when the
    adversary could predict it.
    """
    if multiplier > 100:
        raise ValueError("adversary power is capped at 100x the honest power")
    rng = np.random.default_rng([seed, int.from_bytes(hash2(challenge)[:4], "big")])
    lo, hi = window
    events = []
    for _ in range(rng.poisson(honest_mean)):
        finder = int(honest_nodes[int(rng.integers(len(honest_nodes)))])
        events.append(PowSolution(int(rng.integers(lo, hi + 1)), rng.bytes(TOKEN_BYTES), finder, True))
    rate = honest_mean / max(hi - lo, 1)
    a, b = adversary_window or window
    for _ in range(rng.poisson(multiplier * rate * (b - a))):
        t = int(rng.integers(a, b + 1))
        tok = rng.bytes(TOKEN_BYTES)
        if t >= lo or predictable:
            events.append(PowSolution(t, tok, -1, False))
    events.sort(key=lambda ev: (ev.time, ev.token))
    return events


def flood_solutions(solutions: Sequence[PowSolution], topology: Topology, T3: int, rounds: int,
                    injections: Mapping[int, bytes] | None = None) -> dict[int, bytes | None]:
    """First solution each honest node holds after flooding from T3.

    A node keeps the first solution it found or received and relays only that
    one. ``injections`` maps honest nodes to solutions the adversary hands
    them at T3 (they arrive one round later, like any message).
    """
    honest = topology.honest
    held: dict[int, bytes | None] = {v: None for v in honest}
    for ev in solutions:
        if ev.honest and ev.time <= T3 and held[ev.finder] is None:
            held[ev.finder] = ev.token
    good = topology.good_adjacency()
    fresh = {v for v in honest if held[v] is not None}
    incoming: dict[int, list[bytes]] = {}
    for v, tok in (injections or {}).items():
        incoming.setdefault(v, []).append(tok)
    for _ in range(rounds):
        nxt: dict[int, list[bytes]] = {}
        for v in sorted(fresh):
            for u in good[v]:
                if topology.is_honest(u):
                    nxt.setdefault(u, []).append(held[v])
        fresh = set()
        for v, toks in incoming.items():
            if held[v] is None:
                held[v] = min(toks)
                fresh.add(v)
        incoming = nxt
    for v, toks in incoming.items():
        if held[v] is None:
            held[v] = min(toks)
    return held


def disseminate_and_pick_candidate(chains: Mapping[int, Sequence[Block | None]], epoch: int,
                                   schedule: EpochSchedule, tau: int, rho: int,
                                   previous: Mapping[int, bytes],
                                   valid_tokens: set[bytes] | None = None) -> dict[int, bytes]:
    """Next-epoch beacon as each honest node computes it from its own chain."""
    out = {}
    for v, chain in chains.items():
        challenge = assemble_challenge(chain, epoch, tau, rho)
        cands = []
        for k in schedule.candidate_slots:
            blk = chain[k]
            c = blk.candidate if blk is not None else None
            if c is not None and valid_tokens is not None and c not in valid_tokens:
                c = None
            cands.append(c)
        out[v] = derive_beacon(challenge, cands, previous[v])
    return out


# ---------------------------------------------------------------- chain run

@dataclass
class ChainConfig:
    topology: Topology
    m: int
    s: int
    slot_period: int
    rho: int
    tau: int
    epochs: int
    payload_bytes: int = 64
    strategy: str = "honest-compliant"
    seed: int = 0
    d_slack: int = 0
    honest_pow_mean: float = 2.0
    adversary_multiplier: float = 0.0
    adversary_pow: str = "distinct"  # or "none"
    zero_pow_epochs: tuple[int, ...] = ()
    genesis: bytes = b"genesis"
    coins: CoinDistribution | None = None
    p_bad: float = 0.0
    bad_mode: str = "fixed"
    trace: bool = False

    @property
    def d(self) -> int:
        return self.topology.d + self.d_slack

    @property
    def params(self) -> ProtocolParams:
        return ProtocolParams(m=self.m, d=self.d, s=self.s, l=8 * (BLOCK_HEADER_BYTES + self.payload_bytes))

    @property
    def invocation_rounds(self) -> int:
        return self.params.rounds

    @property
    def gamma(self) -> int:
        return -(-self.invocation_rounds // self.slot_period)

    @property
    def slots(self) -> int:
        return self.epochs * self.rho


@dataclass
class EpochRecord:
    epoch: int
    schedule: EpochSchedule
    challenge_agreed: bool
    predictable: bool
    honest_solutions: int
    adversary_solutions: int
    beacon_agreed: bool = True
    reused: bool = False
    precondition: bool = True


@dataclass
class ChainResult:
    config: ChainConfig
    chains: dict[int, list[Block | None]]
    beacons: dict[int, list[bytes]]  # node -> beacon per epoch (index 0 = genesis)
    latencies: list[int]
    committee_honest: list[bool]
    epochs: list[EpochRecord]
    sim: Simulation

    def agreement_prefix(self) -> int:
        """Slots up to which every committee had an honest member."""
        for k, ok in enumerate(self.committee_honest):
            if not ok:
                return k
        return len(self.committee_honest)

    def chains_agree(self, upto: int | None = None) -> bool:
        upto = self.agreement_prefix() if upto is None else upto
        views = {tuple(b.encode() if b is not None else None for b in c[:upto]) for c in self.chains.values()}
        return len(views) <= 1

    def beacons_agree(self) -> bool:
        return len({tuple(b) for b in self.beacons.values()}) <= 1

    def confirmed_bits(self) -> int:
        ref = next(iter(self.chains.values()))
        return sum(8 * len(b.payload) for b in ref if b is not None)


def run_chain(cfg: ChainConfig) -> ChainResult:
    topo = cfg.topology
    params = cfg.params
    L = params.rounds
    P = cfg.slot_period
    coins = cfg.coins or CoinDistribution.one_coin_each(topo.n)
    schedules = [epoch_schedule(e, cfg.rho, P, L, cfg.tau, cfg.d) for e in range(cfg.epochs)]
    sim = Simulation(topo, cfg.seed, p_bad=cfg.p_bad, bad_mode=cfg.bad_mode, d_limit=cfg.d, trace=cfg.trace)
    honest = topo.honest
    ref = honest[0]
    chains: dict[int, list] = {v: [None] * cfg.slots for v in honest}
    genesis = hash2(cfg.genesis)
    beacons: dict[int, list[bytes]] = {v: [genesis] for v in honest}
    committees: dict[int, CommitteeSpec] = {}
    latencies = [-1] * cfg.slots
    committee_honest = [True] * cfg.slots
    records: list[EpochRecord] = []
    relays: dict[int, bytes | None] = {}
    adv_solutions: list[PowSolution] = []
    sols_epoch: list[PowSolution] = []
    valid_tokens: dict[int, set[bytes]] = {}
    rng = np.random.default_rng([cfg.seed, 5])
    n_done = 0

    def collect():
        nonlocal n_done
        for out in sim.outcomes[n_done:]:
            k = out.instance
            latencies[k] = out.finalized_round
            for v, data in out.outputs.items():
                chains[v][k] = Block.decode(data) if data is not None else None
        n_done = len(sim.outcomes)

    def object_factory(k, cand_pool):
        def make():
            cand = None
            if cand_pool:
                cand = cand_pool[int(rng.integers(len(cand_pool)))]
            return random_block(k, cfg.payload_bytes, rng, cand).encode()
        return make

    total_rounds = (cfg.slots - 1) * P + L
    for T in range(total_rounds):
        collect()
        e_now = T // (cfg.rho * P)
        if T % (cfg.rho * P) == 0 and len(beacons[ref]) == e_now < len(records) + 1:
            _close_epoch(records[e_now - 1], chains, beacons, cfg, valid_tokens.get(e_now - 1))
        for e, sch in enumerate(schedules):
            if T == sch.T2:
                rec = _open_epoch(e, sch, chains, ref, committees, topo, cfg)
                challenge = assemble_challenge(chains[ref], e, cfg.tau, cfg.rho)
                mean = 0.0 if e in cfg.zero_pow_epochs else cfg.honest_pow_mean
                mult = 0.0 if e in cfg.zero_pow_epochs else cfg.adversary_multiplier
                sols = simulate_pow(challenge, (sch.T2, sch.T3), honest, mean, mult,
                                    adversary_window=(sch.T1, sch.T5), seed=cfg.seed,
                                    predictable=rec.predictable)
                rec.honest_solutions = sum(s.honest for s in sols)
                rec.adversary_solutions = sum(not s.honest for s in sols)
                valid_tokens[e] = {s.token for s in sols}
                adv_solutions = [s for s in sols if not s.honest]
                records.append(rec)
                sols_epoch = sols
            if T == sch.T4 and e < len(records):
                injections = {}
                early = [s for s in adv_solutions if s.time <= sch.T3]
                if cfg.adversary_pow == "distinct" and early:
                    ctx_targets = _adversary_targets(topo)
                    for i, v in enumerate(ctx_targets):
                        injections[v] = early[i % len(early)].token
                relays = flood_solutions(sols_epoch, topo, sch.T3, 2 * cfg.d, injections)
        if T % P == 0 and T // P < cfg.slots:
            k = T // P
            e = k // cfg.rho
            beacon = beacons[ref][e] if e < len(beacons[ref]) else beacons[ref][-1]
            com = select_committee(beacon, k, coins, cfg.m)
            committees[k] = com
            committee_honest[k] = any(topo.is_honest(v) for v in com.members)
            is_cand = k in schedules[e].candidate_slots
            b = com.broadcaster
            cand_pool = [s.token for s in adv_solutions if s.time <= T] if is_cand else []
            if is_cand and cfg.strategy == "honest-compliant":
                # a compliant broadcaster embeds what flooding handed it, like an honest one
                cand_pool = sorted({c for c in relays.values() if c is not None}) or cand_pool
            if topo.is_honest(b):
                cand = relays.get(b) if is_cand else None
                obj = random_block(k, cfg.payload_bytes, rng, cand).encode()
            else:
                obj = object_factory(k, cand_pool)()
            strategy = make_strategy(cfg.strategy)
            sim.schedule(InvocationSpec(k, T, params, com, strategy, obj, 8 * len(obj),
                                        object_factory(k, cand_pool)))
        sim.step()
    collect()
    for rec in records[len(beacons[ref]) - 1:]:
        _close_epoch(rec, chains, beacons, cfg, valid_tokens.get(rec.epoch))
    return ChainResult(cfg, chains, beacons, latencies, committee_honest, records, sim)


def _adversary_targets(topo: Topology) -> list[int]:
    out = set()
    for u in topo.malicious:
        out.update(v for v in topo.adjacency[u] if topo.is_honest(v))
    return sorted(out)


def _open_epoch(e, sch, chains, ref, committees, topo, cfg) -> EpochRecord:
    views = {assemble_challenge(c, e, cfg.tau, cfg.rho) for c in chains.values()}
    predictable = all(not topo.is_honest(committees[k].broadcaster) for k in sch.challenge_slots)
    return EpochRecord(e, sch, len(views) == 1, predictable, 0, 0)


def _close_epoch(rec: EpochRecord, chains, beacons, cfg, tokens) -> None:
    prev = {v: b[-1] for v, b in beacons.items()}
    nxt = disseminate_and_pick_candidate(chains, rec.epoch, rec.schedule, cfg.tau, cfg.rho, prev, tokens)
    for v, b in nxt.items():
        beacons[v].append(b)
    rec.beacon_agreed = len(set(nxt.values())) == 1
    rec.reused = all(nxt[v] == prev[v] for v in nxt)
