"""Byzantine behaviors for the malicious nodes.

All malicious nodes share one brain per invocation (an ``AdversaryContext``).
The brain sees every message sent to a malicious node, including the ones sent
in the current round, and may send anything on edges incident to malicious
nodes. It can sign for malicious committee members and can reuse honest
signatures it has observed; anything else fails verification at honest nodes.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .crypto_kit import (
    AggregateSignature,
    Fragment,
    MerkleProof,
    SimulatedScheme,
    fragment_object,
    last_fragment_item,
    make_signature,
)
from .overlaybb import ProtocolParams, RoundMessages


class UnknownStrategy(KeyError):
    pass


class AdversaryContext:
    def __init__(self, topology, params: ProtocolParams, committee, scheme: SimulatedScheme,
                 rng: np.random.Generator, instance: int = 0, object_factory=None):
        self.topology = topology
        self.object_factory = object_factory  # callable returning bytes, e.g. encoded blocks
        self.params = params
        self.committee = committee
        self.scheme = scheme
        self.rng = rng
        self.instance = instance
        self.malicious = sorted(topology.malicious)
        # each honest node adjacent to the adversary, with one malicious sender
        self.targets: dict[int, int] = {}
        for u in self.malicious:
            for v in sorted(topology.adjacency[u]):
                if topology.is_honest(v) and v not in self.targets:
                    self.targets[v] = u
        self.mal_weights = {v: w for v, w in committee.members.items() if v in topology.malicious}
        self.seen_signers: dict[bytes, set[int]] = defaultdict(set)
        self.seen_roots: dict[bytes, int] = {}
        self.seen_frags: dict[tuple[bytes, int], Fragment] = {}
        self.outbox: list[tuple[int, int, RoundMessages]] = []
        self.t = 0

    @property
    def broadcaster_malicious(self) -> bool:
        return self.committee.broadcaster in self.topology.malicious

    @property
    def malicious_weight(self) -> int:
        return sum(self.mal_weights.values())

    def observe(self, msgs: RoundMessages) -> None:
        for root, sig in msgs.roots:
            self.seen_roots.setdefault(root, self.t)
            self._note(sig)
        for root, frag in msgs.fragments:
            self.seen_frags.setdefault((root, frag.index), frag)
        for root, frag, sig in msgs.last_frags:
            self.seen_frags.setdefault((root, frag.index), frag)
            self._note(sig)

    def _note(self, sig: AggregateSignature) -> None:
        honest = [v for v in sig.signer_ids() if self.topology.is_honest(v)]
        self.seen_signers[sig.item].update(honest)

    def signature(self, item: bytes, honest: bool = True, malicious=True) -> AggregateSignature:
        """Best signature the adversary can produce on ``item``.

        ``malicious`` is True for every malicious committee member, False for
        none, or an iterable of node ids.
        """
        if malicious is True:
            mal = list(self.mal_weights)
        elif malicious is False:
            mal = []
        else:
            mal = [v for v in malicious if v in self.mal_weights]
        signers = {}
        for v in mal:
            self.scheme.sign(AggregateSignature(item), v, self.mal_weights[v])
            signers[v] = self.mal_weights[v]
        if honest:
            for v in self.seen_signers.get(item, ()):
                signers[v] = self.committee.members[v]
        return make_signature(item, signers)

    def root_signature(self, root: bytes, **kw) -> AggregateSignature:
        if "malicious" not in kw:
            kw["malicious"] = True
        sig = self.signature(root, **kw)
        if self.broadcaster_malicious and not sig.contains(self.committee.broadcaster):
            sig = self.signature(root, honest=kw.get("honest", True),
                                 malicious=[self.committee.broadcaster] + list(sig.signer_ids()))
        return sig

    def make_object(self, nbits: int | None = None):
        if self.object_factory is not None:
            obj = self.object_factory()
            nbits = 8 * len(obj)
        else:
            nbits = self.params.l if nbits is None else nbits
            obj = _random_bits(self.rng, nbits)
        frags, root = fragment_object(obj, self.params.s, self.rng, nbits=nbits, l_nonce=self.params.l_nonce)
        return root, frags, obj

    def send(self, dst: int, msgs: RoundMessages, src: int | None = None) -> None:
        if not msgs:
            return
        self.outbox.append((self.targets[dst] if src is None else src, dst, msgs))

    def send_all(self, msgs: RoundMessages, targets=None) -> None:
        for v in (self.targets if targets is None else targets):
            self.send(v, msgs)

    def drain(self):
        out, self.outbox = self.outbox, []
        return out


def _random_bits(rng: np.random.Generator, nbits: int) -> bytes:
    raw = bytearray(rng.bytes((nbits + 7) // 8))
    spare = 8 * len(raw) - nbits
    if spare:
        raw[-1] &= (0xFF << spare) & 0xFF
    return bytes(raw)


def last_msg(ctx: AdversaryContext, root: bytes, xs: Fragment, **kw) -> RoundMessages:
    item = last_fragment_item(root, xs)
    return RoundMessages(last_frags=[(root, xs, ctx.signature(item, **kw))])


class Strategy:
    name = "base"
    runs_protocol = False  # malicious nodes also run the honest state machine

    def setup(self, ctx: AdversaryContext) -> None:
        pass

    def act(self, t: int, ctx: AdversaryContext) -> None:
        pass

    def filter_outgoing(self, node: int, msgs: RoundMessages, ctx: AdversaryContext) -> RoundMessages:
        return msgs


class HonestCompliant(Strategy):
    name = "honest-compliant"
    runs_protocol = True


class Silent(Strategy):
    name = "silent"


class SignatureWithholder(Strategy):
    """Run the protocol and sign, but strip malicious signatures before relaying."""

    name = "signature-withholder"
    runs_protocol = True

    def _strip(self, sig: AggregateSignature, ctx: AdversaryContext, keep: int | None = None):
        kept = {v: w for v, w in sig.signers if ctx.topology.is_honest(v) or v == keep}
        if len(kept) == len(sig.signers):
            return sig
        return make_signature(sig.item, kept)

    def filter_outgoing(self, node, msgs, ctx):
        b = ctx.committee.broadcaster
        roots = [(r, self._strip(sig, ctx, keep=b)) for r, sig in msgs.roots]
        last = [(r, f, self._strip(sig, ctx)) for r, f, sig in msgs.last_frags]
        return RoundMessages(roots, list(msgs.fragments), last)


class _Release:
    """A scheduled set of sends for one object."""

    def __init__(self, root, frags):
        self.root = root
        self.frags = frags
        self.plan: dict[int, list] = defaultdict(list)

    def add(self, t: int, kind: str, targets, **kw):
        self.plan[t].append((kind, list(targets), kw))


def _run_plan(rel: _Release, t: int, ctx: AdversaryContext) -> None:
    for kind, targets, kw in rel.plan.get(t, ()):
        if kind == "root":
            msgs = RoundMessages(roots=[(rel.root, ctx.root_signature(rel.root, **kw))])
        elif kind == "frag":
            msgs = RoundMessages(fragments=[(rel.root, rel.frags[kw["index"] - 1])])
        else:
            xs = rel.frags[-1]
            msgs = last_msg(ctx, rel.root, xs, **kw)
        ctx.send_all(msgs, targets)


class Equivocator(Strategy):
    """Two objects; the second one's signatures are released late.

    The late release lands at a round where the receiving committee member is
    just barely willing to accept, which is the most damaging timing.
    """

    name = "equivocator"

    def setup(self, ctx):
        self.releases: list[_Release] = []
        self.late_relay = not ctx.broadcaster_malicious
        targets = list(ctx.targets)
        if not targets:
            return
        rng = ctx.rng
        p = ctx.params
        d, s = p.d, p.s
        W = max(ctx.malicious_weight, 1)
        if self.late_relay:
            self.boundary = int(rng.choice([2 * d * W - 1, 2 * d * W - d - 1, 2 * d * W, int(rng.integers(0, 2 * d * W + d + 1))]))
            self.late_targets = [targets[int(rng.integers(len(targets)))]]
            return
        rng.shuffle(targets)
        split = int(rng.integers(1, len(targets) + 1))
        group_a, group_b = targets[:split], (targets[split:] or targets[:1])
        for k, group in enumerate((group_a, group_b)):
            root, frags, _ = ctx.make_object()
            rel = _Release(root, frags)
            if k == 0:
                t0 = int(rng.integers(0, 2))
                rel.add(t0, "root", group, malicious=bool(rng.integers(2)) or [ctx.committee.broadcaster])
                late = int(rng.integers(0, 2 * d * W + d + 1))
                rel.add(late, "root", targets[:1], malicious=True)
            else:
                t0 = max(0, int(rng.choice([2 * d * W - 1, 2 * d * W - d - 1, 2 * d * W - 2, int(rng.integers(0, 2 * d * W + 1))])))
                one = [group[int(rng.integers(len(group)))]]
                rel.add(t0, "root", one, malicious=True)
            for i in range(1, s):
                rel.add(t0 + i - 1, "frag", group, index=i)
            xs_t = max(t0 + s - 1, int(rng.integers(0, 2 * d * W + s + 1)))
            rel.add(xs_t, "last", group if k == 0 else group[:1], malicious=True)
            rel.add(min(xs_t + int(rng.integers(1, 2 * d + 2)), p.rounds - 1), "last", targets, malicious=True)
            self.releases.append(rel)

    def act(self, t, ctx):
        for rel in self.releases:
            _run_plan(rel, t, ctx)
        if self.late_relay and t == getattr(self, "boundary", -1):
            for root in list(ctx.seen_roots):
                ctx.send_all(RoundMessages(roots=[(root, ctx.root_signature(root))]), self.late_targets)
                frags = [ctx.seen_frags.get((root, i)) for i in range(1, ctx.params.s + 1)]
                if all(f is not None for f in frags):
                    ctx.send_all(RoundMessages(fragments=[(root, f) for f in frags[:-1]]), self.late_targets)
        if self.late_relay and t == getattr(self, "boundary", -1) + 1:
            for root in list(ctx.seen_roots):
                xs = ctx.seen_frags.get((root, ctx.params.s))
                if xs is not None:
                    ctx.send_all(last_msg(ctx, root, xs), self.late_targets)


class Flooder(Strategy):
    """Fresh broadcaster-signed roots every round, with their fragments."""

    name = "flooder"

    def __init__(self, per_round: int = 3):
        self.per_round = per_round

    def setup(self, ctx):
        self.pending_last: list = []

    def act(self, t, ctx):
        if not ctx.targets:
            return
        for root, xs in self.pending_last:
            ctx.send_all(last_msg(ctx, root, xs))
        self.pending_last = []
        if not ctx.broadcaster_malicious:
            # roots without the broadcaster's signature are discarded on receipt
            junk = []
            for _ in range(self.per_round):
                r = ctx.rng.bytes(32)
                junk.append((r, ctx.signature(r, honest=False)))
            ctx.send_all(RoundMessages(roots=junk))
            return
        for _ in range(self.per_round):
            root, frags, _ = ctx.make_object()
            msgs = RoundMessages(roots=[(root, ctx.root_signature(root))],
                                 fragments=[(root, f) for f in frags[:-1]])
            ctx.send_all(msgs)
            self.pending_last.append((root, frags[-1]))


class BusyAligner(Strategy):
    """Withhold every fragment, then release them all in the same round.

    Honest nodes can forward only one fragment per round, so the last
    fragment of the object queues behind the others.
    """

    name = "busy-aligner"

    def setup(self, ctx):
        p = ctx.params
        self.release_round = int(ctx.rng.integers(1, 2 * p.d * p.m + 1))
        self.rel = None
        if ctx.broadcaster_malicious and ctx.targets:
            root, frags, obj = ctx.make_object()
            self.rel = _Release(root, frags)
            self.object = obj
            self.rel.add(0, "root", ctx.targets, malicious=True)
            for i in range(1, p.s):
                self.rel.add(self.release_round, "frag", ctx.targets, index=i)
            self.rel.add(self.release_round + 1, "last", ctx.targets, malicious=True)

    def act(self, t, ctx):
        if self.rel is not None:
            _run_plan(self.rel, t, ctx)
            return
        if t == self.release_round:
            for root in list(ctx.seen_roots):
                frags = [ctx.seen_frags.get((root, i)) for i in range(1, ctx.params.s)]
                ctx.send_all(RoundMessages(roots=[(root, ctx.root_signature(root))],
                                           fragments=[(root, f) for f in frags if f is not None]))


class Forger(Strategy):
    """Claims signatures from honest committee members and corrupts fragments.

    Everything it sends fails verification, so honest nodes blacklist it.
    """

    name = "forger"

    def act(self, t, ctx):
        if not ctx.targets:
            return
        p = ctx.params
        members = dict(ctx.committee.members)
        b = ctx.committee.broadcaster
        root = ctx.rng.bytes(32)
        # claims every committee member, including honest ones that never signed
        forged = make_signature(root, members)
        msgs = RoundMessages(roots=[(root, forged)])
        for seen_root in list(ctx.seen_roots)[:1]:
            forged_seen = make_signature(seen_root, members)
            msgs.roots.append((seen_root, forged_seen))
            for i in range(1, p.s):
                good = ctx.seen_frags.get((seen_root, i))
                if good is not None:
                    bad = bytearray(good.payload)
                    bad[0] ^= 0x80
                    msgs.fragments.append((seen_root, Fragment(i, bytes(bad), good.nbits, good.proof)))
        if b in members:
            msgs.fragments.append((root, Fragment(1, b"\x00" * 4, 32, MerkleProof(1, ()))))
        ctx.send_all(msgs)


class Scheduled(Strategy):
    """Replays a fixed schedule over two adversarial objects.

    ``schedule`` maps a round to ``{honest target: set of object indices}``.
    Sending object k to a target means its root, signature and data fragments
    in that round, then the last fragment with its signature one round later.
    With ``use_seen`` the signatures also carry every honest signature the
    adversary has observed on the item.
    """

    name = "scheduled"

    def __init__(self, schedule: dict[int, dict[int, frozenset]], use_seen: bool = True):
        self.schedule = schedule
        self.use_seen = use_seen

    def setup(self, ctx):
        self.objects = [ctx.make_object() for _ in range(2)]  # (root, frags, obj)
        self.later: dict[int, list] = defaultdict(list)

    def act(self, t, ctx):
        for dst, k in self.later.pop(t, ()):
            root, frags, _ = self.objects[k]
            ctx.send(dst, last_msg(ctx, root, frags[-1], honest=self.use_seen))
        for dst, picks in sorted(self.schedule.get(t, {}).items()):
            msgs = RoundMessages()
            for k in sorted(picks):
                root, frags, _ = self.objects[k]
                msgs.roots.append((root, ctx.root_signature(root, honest=self.use_seen)))
                msgs.fragments.extend((root, f) for f in frags[:-1])
                self.later[t + 1].append((dst, k))
            ctx.send(dst, msgs)


_CATALOG = {
    cls.name: cls
    for cls in (HonestCompliant, Equivocator, Flooder, BusyAligner, Silent, SignatureWithholder, Forger)
}


def adversary_catalog() -> dict[str, type]:
    return dict(_CATALOG)


def make_strategy(name: str) -> Strategy:
    try:
        return _CATALOG[name]()
    except KeyError:
        raise UnknownStrategy(f"unknown adversary strategy {name!r}; known: {sorted(_CATALOG)}") from None
