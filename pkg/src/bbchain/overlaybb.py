"""Per-node state machine for one byzantine broadcast invocation.

A node runs ``ingest`` for every neighbor message of the round, then
``forward_merkle_root`` and ``forward_fragment``; after ``2dm + s`` rounds
``finalize`` yields the object or ``None`` (bottom).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .crypto_kit import (
    L_HASH,
    L_NONCE,
    L_SIG,
    LENGTH_FIELD_BITS,
    AggregateSignature,
    Fragment,
    SimulatedScheme,
    ReconstructionError,
    chunk_bits,
    encode_fragment,
    fragment_object,
    last_fragment_item,
    reconstruct_object,
    tree_depth,
    verify_proof,
)

SELF = -1
INF = math.inf
MAX_MESSAGE_BITS = 10 * 1024 * 8


class InvalidRole(ValueError):
    pass


class ProtocolInvariantError(AssertionError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    m: int
    d: int
    s: int
    l: int  # largest object size in bits that a broadcaster may send
    l_hash: int = L_HASH
    l_sig: int = L_SIG
    l_nonce: int = L_NONCE

    def __post_init__(self):
        if self.s < 2 or self.m < 1 or self.d < 1 or self.l < 1:
            raise ValueError(f"invalid protocol parameters {self}")

    @property
    def rounds(self) -> int:
        return 2 * self.d * self.m + self.s

    @property
    def chunk_bits(self) -> int:
        return chunk_bits(self.l, self.s)

    @property
    def depth(self) -> int:
        return tree_depth(self.s)

    @property
    def framed_bits(self) -> int:
        """Object size as charged by the bandwidth bound.

        Fragment 1 also carries the 32-bit length field, so every data
        fragment is charged that much to keep the bound an upper bound.
        """
        return (self.s - 1) * (self.chunk_bits + LENGTH_FIELD_BITS)

    def max_payload_bits(self, index: int) -> int:
        if index == self.s:
            return self.l_nonce
        if index == 1:
            return self.chunk_bits + LENGTH_FIELD_BITS
        return self.chunk_bits

    def root_msg_bits(self) -> int:
        return self.l_hash + self.l_sig + self.m

    def frag_msg_bits(self, frag: Fragment) -> int:
        return frag.wire_bits(self.l_hash)

    def last_msg_bits(self, frag: Fragment) -> int:
        return frag.wire_bits(self.l_hash) + self.l_sig + self.m


@dataclass
class Push:
    root: bytes
    sig_weight: int
    round: int
    score: int


@dataclass
class RoundMessages:
    roots: list = field(default_factory=list)  # (root, sig)
    fragments: list = field(default_factory=list)  # (root, fragment)
    last_frags: list = field(default_factory=list)  # (root, fragment, sig)

    def __bool__(self):
        return bool(self.roots or self.fragments or self.last_frags)

    def wire_bits(self, params: ProtocolParams) -> int:
        bits = len(self.roots) * params.root_msg_bits()
        bits += sum(params.frag_msg_bits(f) for _, f in self.fragments)
        bits += sum(params.last_msg_bits(f) for _, f, _ in self.last_frags)
        return bits


@dataclass
class OpCounts:
    sign_adds: int = 0
    sig_pass: int = 0
    sig_fail: int = 0
    merkle_pass: int = 0
    merkle_fail: int = 0

    def as_dict(self):
        return dict(self.__dict__)


class _Pool:
    """Items keyed by content, remembering which neighbors sent each one."""

    def __init__(self):
        self.items: dict = {}

    def add(self, key, value, source) -> None:
        entry = self.items.get(key)
        if entry is None:
            self.items[key] = (value, {source})
        else:
            entry[1].add(source)

    def drop_source(self, source) -> list:
        gone = []
        for key in list(self.items):
            srcs = self.items[key][1]
            srcs.discard(source)
            if not srcs:
                gone.append(key)
                del self.items[key]
        return gone

    def __len__(self):
        return len(self.items)


class BroadcastInstance:
    """State of one invocation at one node.

    Verification is lazy: a signature or Merkle proof is checked only when the
    item is about to be used. A failed check blacklists every neighbor that
    sent the item and drops everything received from them.
    """

    def __init__(self, node: int, params: ProtocolParams, committee, scheme: SimulatedScheme,
                 blacklist: set | None = None):
        self.node = node
        self.params = params
        self.weights: Mapping[int, int] = committee.members
        self.broadcaster = committee.broadcaster
        self.scheme = scheme
        self.my_weight = self.weights.get(node, 0)
        self.is_committee = self.my_weight > 0
        self.blacklist = blacklist if blacklist is not None else set()

        self.all_root: dict[bytes, set] = {}
        self.all_sig: dict[bytes, _Pool] = {}
        self.all_frag: dict[tuple[bytes, int], _Pool] = {}
        self.all_push: dict[bytes, Push] = {}
        self.root_accepted: set[bytes] = set()
        self.t_root = INF
        self.frag_accepted = False
        self.forwarded_frags: set[tuple[bytes, int]] = set()

        self._purged: set = set()
        self._good_sigs: set = set()
        self._good_frags: dict[tuple[bytes, int], Fragment] = {}
        # (root, sender) -> data indices that sender delivered in earlier rounds
        self._sent_by: dict[tuple[bytes, int], set[int]] = {}
        self._pending_sent: list = []
        self.ops = OpCounts()
        self.round_ops: list[OpCounts] = []
        self.discarded_roots = 0
        self.ignored_last = 0
        self.blacklisted: list[tuple[int, int]] = []
        self.root_accept_round: dict[bytes, int] = {}
        self.frag_accept_round: int | None = None
        self.xs_first_sent: int | None = None
        self.object: bytes | None = None
        self.root: bytes | None = None
        self._t = -1

    # ------------------------------------------------------------ setup

    def start_as_broadcaster(self, obj: bytes, rng: np.random.Generator, nbits: int | None = None):
        if self.node != self.broadcaster:
            raise InvalidRole(f"node {self.node} is not the broadcaster")
        p = self.params
        nbits = 8 * len(obj) if nbits is None else nbits
        if nbits > p.l:
            raise ValueError(f"object of {nbits} bits exceeds the {p.l}-bit limit")
        frags, root = fragment_object(obj, p.s, rng, nbits=nbits, l_nonce=p.l_nonce)
        self.object, self.root = obj, root
        self.all_root[root] = {SELF}
        for f in frags:
            self._add_frag(root, f, SELF)
            self._good_frags[(root, f.index)] = f
        sig = self.scheme.sign(AggregateSignature(root), self.node, self.my_weight)
        self._add_sig(sig, SELF)
        self._good_sigs.add((root, sig.signers, sig.tag))
        return root, frags

    # ------------------------------------------------------------ storage

    def _add_sig(self, sig: AggregateSignature, source) -> None:
        pool = self.all_sig.get(sig.item)
        if pool is None:
            pool = self.all_sig[sig.item] = _Pool()
        pool.add((sig.signers, sig.tag), sig, source)

    def _add_frag(self, root: bytes, frag: Fragment, source) -> None:
        key = (root, frag.index)
        pool = self.all_frag.get(key)
        if pool is None:
            pool = self.all_frag[key] = _Pool()
        pool.add(encode_fragment(frag), frag, source)

    def _blacklist(self, source) -> None:
        if source == SELF or source in self.blacklist:
            return
        self.blacklist.add(source)
        self.blacklisted.append((self._t, source))
        self._purge(source)

    def _sync_blacklist(self) -> None:
        # the blacklist is shared by all invocations a node runs
        for source in self.blacklist - self._purged:
            self._purge(source)

    def _purge(self, source) -> None:
        self._purged.add(source)
        for pool in self.all_sig.values():
            pool.drop_source(source)
        for pool in self.all_frag.values():
            pool.drop_source(source)
        for root in list(self.all_root):
            self.all_root[root].discard(source)
            if not self.all_root[root] or not self.all_sig.get(root):
                del self.all_root[root]

    # ------------------------------------------------------------ receive

    def ingest(self, msgs: RoundMessages, sender: int) -> None:
        if sender in self.blacklist:
            return
        s = self.params.s
        for root, sig in msgs.roots:
            if sig.item != root or not sig.contains(self.broadcaster):
                self.discarded_roots += 1
                continue
            self.all_root.setdefault(root, set()).add(sender)
            self._add_sig(sig, sender)
        for root, frag in msgs.fragments:
            if 1 <= frag.index < s:
                self._add_frag(root, frag, sender)
                self._pending_sent.append(((root, sender), frag.index))
        for root, frag, sig in msgs.last_frags:
            if frag.index != s:
                continue
            # forerunner rule: the sender must already have sent x_1..x_{s-1}
            if len(self._sent_by.get((root, sender), ())) < s - 1:
                self.ignored_last += 1
                continue
            self._add_frag(root, frag, sender)
            if sig.item == last_fragment_item(root, frag):
                self._add_sig(sig, sender)

    def _close_receipts(self) -> None:
        for key, index in self._pending_sent:
            self._sent_by.setdefault(key, set()).add(index)
        self._pending_sent.clear()

    # ------------------------------------------------------------ lazy checks

    def _claimed_best(self, item: bytes) -> AggregateSignature | None:
        pool = self.all_sig.get(item)
        if not pool:
            return None
        return min((v[0] for v in pool.items.values()), key=lambda g: (-g.weight, g.signers, g.tag))

    def _sigma(self, item: bytes) -> AggregateSignature:
        """sigma(item) restricted to signatures that pass verification."""
        while True:
            best = self._claimed_best(item)
            if best is None:
                return AggregateSignature(item)
            key = (item, best.signers, best.tag)
            if key in self._good_sigs:
                return best
            if self.scheme.verify(best, self.weights):
                self.ops.sig_pass += 1
                self._good_sigs.add(key)
                return best
            self.ops.sig_fail += 1
            for src in list(self.all_sig[item].items[(best.signers, best.tag)][1]):
                self._blacklist(src)

    def _fragment(self, root: bytes, index: int) -> Fragment | None:
        key = (root, index)
        good = self._good_frags.get(key)
        if good is not None:
            return good
        pool = self.all_frag.get(key)
        while pool:
            fkey = min(pool.items)
            frag, srcs = pool.items[fkey]
            p = self.params
            ok = (frag.index == index and frag.nbits <= p.max_payload_bits(index)
                  and len(frag.proof.path) == p.depth and verify_proof(root, frag))
            if index == p.s:
                ok = ok and frag.nbits == p.l_nonce
            if ok:
                self.ops.merkle_pass += 1
                self._good_frags[key] = frag
                return frag
            self.ops.merkle_fail += 1
            for src in list(srcs):
                self._blacklist(src)
            pool = self.all_frag.get(key)
        return None

    def _top_roots(self) -> list[bytes]:
        while True:
            ranked = []
            for r in self.all_root:
                best = self._claimed_best(r)
                ranked.append((-(best.weight if best else 0), r))
            ranked.sort()
            top = [r for _, r in ranked[:2]]
            before = len(self.blacklist)
            for r in top:
                self._sigma(r)
            if len(self.blacklist) == before:
                return [r for r in top if r in self.all_root]

    # ------------------------------------------------------------ algorithm

    def _accept_root(self, r: bytes, t: int) -> None:
        if r not in self.root_accepted:
            self.root_accepted.add(r)
            self.root_accept_round[r] = t
        self.t_root = min(self.t_root, t)

    def _sign(self, sig: AggregateSignature) -> None:
        if not sig.contains(self.node):
            self.ops.sign_adds += 1
        new = self.scheme.sign(sig, self.node, self.my_weight)
        self._add_sig(new, SELF)
        self._good_sigs.add((new.item, new.signers, new.tag))

    def forward_merkle_root(self, t: int) -> list:
        self._t = t
        d = self.params.d
        out = []
        for r in self._top_roots():
            y = self._sigma(r).weight
            if self.is_committee and 2 * d * y >= t:
                self._sign(self._sigma(r))
                self._accept_root(r, t)
            if not self.is_committee and 2 * d * y >= t + d:
                self._accept_root(r, t)
            sig = self._sigma(r)
            out.append((r, sig))
            score = 2 * d * sig.weight - t
            prev = self.all_push.get(r)
            if prev is None or score > prev.score:
                self.all_push[r] = Push(r, sig.weight, t, score)
        return out

    def best_push(self) -> Push | None:
        live = [p for p in self.all_push.values()]
        if not live:
            return None
        return min(live, key=lambda p: (-p.score, p.root))

    def forward_fragment(self, t: int):
        """Returns ``("frag", root, x_i)``, ``("last", root, x_s, sig)`` or None."""
        self._t = t
        p = self.best_push()
        if p is None:
            return None
        s, d = self.params.s, self.params.d
        root = p.root
        for i in range(1, s):
            if (root, i) in self.forwarded_frags:
                continue
            frag = self._fragment(root, i)
            if frag is not None:
                self.forwarded_frags.add((root, i))
                return ("frag", root, frag)
        frags = [self._fragment(root, i) for i in range(1, s + 1)]
        if any(f is None for f in frags):
            return None
        xs = frags[-1]
        item = last_fragment_item(root, xs)
        t_frag = max(t, self.t_root + s - 1)
        y = self._sigma(item).weight
        if self.is_committee and 2 * d * y >= max(t_frag - (s - 1), 0):
            self._sign(self._sigma(item))
            self._set_frag_accepted(t)
        if not self.is_committee and 2 * d * y >= max(t_frag - (s - 1), 0) + d:
            self._set_frag_accepted(t)
        if self.xs_first_sent is None:
            self.xs_first_sent = t
        return ("last", root, xs, self._sigma(item))

    def _set_frag_accepted(self, t: int) -> None:
        if not self.frag_accepted:
            self.frag_accepted = True
            self.frag_accept_round = t

    def step(self, t: int) -> RoundMessages:
        """Run both forwarding phases for round ``t`` after all ingests."""
        self._close_receipts()
        self._sync_blacklist()
        before = OpCounts(**self.ops.as_dict())
        out = RoundMessages(roots=self.forward_merkle_root(t))
        sent = self.forward_fragment(t)
        if sent is not None:
            if sent[0] == "frag":
                out.fragments.append((sent[1], sent[2]))
            else:
                out.last_frags.append((sent[1], sent[2], sent[3]))
        self.round_ops.append(OpCounts(**{k: v - getattr(before, k) for k, v in self.ops.as_dict().items()}))
        return out

    def finalize(self) -> bytes | None:
        if len(self.root_accepted) != 1 or not self.frag_accepted:
            return None
        (root,) = self.root_accepted
        frags = [self._fragment(root, i) for i in range(1, self.params.s + 1)]
        if any(f is None for f in frags):
            raise ProtocolInvariantError(f"node {self.node}: accepted root lacks fragments")
        try:
            return reconstruct_object(frags, root)
        except ReconstructionError:
            # committed content that does not decode; every honest node holds
            # the same fragments for this root, so all of them land here
            return None


def init_instance(node: int, params: ProtocolParams, committee, scheme: SimulatedScheme,
                  obj: bytes | None = None, rng: np.random.Generator | None = None,
                  nbits: int | None = None, blacklist: set | None = None) -> BroadcastInstance:
    inst = BroadcastInstance(node, params, committee, scheme, blacklist)
    if obj is not None:
        inst.start_as_broadcaster(obj, rng if rng is not None else np.random.default_rng(), nbits)
    elif node == committee.broadcaster:
        raise InvalidRole("the broadcaster must supply an object")
    return inst
