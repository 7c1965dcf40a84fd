"""Digests, Merkle trees, object fragmentation and weighted aggregate signatures.

Wire formats (all integers big-endian):

* digest: 32 raw bytes (SHA-256).
* leaf hash: ``H(0x00 | index:u32 | nbits:u32 | payload)``.
* internal node: ``H(0x01 | left | right)``; padding leaves are ``H(0x02)``.
* fragment: ``index:u32 | nbits:u32 | payload | depth:u8 | depth x (side:u8 | sibling:32)``.
* signature: ``item:32 | count:u16 | count x (node:u32 | weight:u16) | tag:96``.

The bit model used for bandwidth accounting is separate from these byte
encodings: a digest costs ``l_hash`` bits, a proof step ``l_hash + 1`` bits and
a signature ``l_sig + m`` bits (the aggregate plus an m-bit signer vector).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DIGEST_BYTES = 32
SIG_TAG_BYTES = 96
LENGTH_FIELD_BITS = 32
L_HASH = 256
L_SIG = 768
L_NONCE = 256

_LEAF = b"\x00"
_NODE = b"\x01"
_EMPTY = b"\x02"
_LAST = b"\x03"


class InvalidInput(ValueError):
    pass


class InvalidParameter(ValueError):
    pass


class InvalidSigner(ValueError):
    pass


class ReconstructionError(ValueError):
    pass


def H(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash1(data: bytes) -> bytes:
    """Hash used for committee randomness."""
    return hashlib.sha256(b"hash1|" + data).digest()


def hash2(data: bytes) -> bytes:
    """Hash used for PoW solutions and beacons."""
    return hashlib.sha256(b"hash2|" + data).digest()


EMPTY_LEAF = H(_EMPTY)


def leaf_hash(index: int, payload: bytes, nbits: int | None = None) -> bytes:
    if nbits is None:
        nbits = 8 * len(payload)
    return H(_LEAF + struct.pack(">II", index, nbits) + payload)


def node_hash(left: bytes, right: bytes) -> bytes:
    return H(_NODE + left + right)


def tree_depth(s: int) -> int:
    """ceil(log2 s), computed exactly."""
    return (s - 1).bit_length()


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    # (sibling digest, sibling sits on the left) from the leaf upwards
    path: tuple[tuple[bytes, bool], ...]


@dataclass(frozen=True)
class Fragment:
    index: int
    payload: bytes
    nbits: int
    proof: MerkleProof

    def leaf(self) -> bytes:
        return leaf_hash(self.index, self.payload, self.nbits)

    def wire_bits(self, l_hash: int = L_HASH) -> int:
        return self.nbits + (l_hash + 1) * len(self.proof.path)


def build_merkle(leaves: Sequence[bytes], nbits: Sequence[int] | None = None):
    """Return ``(root, proofs)`` for 1-based leaf indices.

    The leaf count is padded to a power of two with ``EMPTY_LEAF``.
    """
    if len(leaves) == 0:
        raise InvalidInput("cannot build a Merkle tree over no leaves")
    if nbits is None:
        nbits = [8 * len(p) for p in leaves]
    s = len(leaves)
    width = 1 << tree_depth(s)
    level = [leaf_hash(i + 1, p, b) for i, (p, b) in enumerate(zip(leaves, nbits))]
    level += [EMPTY_LEAF] * (width - s)
    levels = [level]
    while len(level) > 1:
        level = [node_hash(level[j], level[j + 1]) for j in range(0, len(level), 2)]
        levels.append(level)
    root = level[0]
    proofs = []
    for i in range(s):
        pos = i
        path = []
        for lv in levels[:-1]:
            sib = pos ^ 1
            path.append((lv[sib], sib < pos))
            pos >>= 1
        proofs.append(MerkleProof(i + 1, tuple(path)))
    return root, proofs


def verify_proof(root: bytes, fragment: Fragment) -> bool:
    proof = fragment.proof
    if proof.leaf_index != fragment.index or fragment.index < 1:
        return False
    pos = fragment.index - 1
    if pos >= (1 << len(proof.path)):
        return False
    if len(fragment.payload) != (fragment.nbits + 7) // 8:
        return False
    h = fragment.leaf()
    for sibling, sib_left in proof.path:
        if sib_left != bool(pos & 1) or len(sibling) != DIGEST_BYTES:
            return False
        h = node_hash(sibling, h) if sib_left else node_hash(h, sibling)
        pos >>= 1
    return h == root


def _to_int(data: bytes, nbits: int) -> int:
    return int.from_bytes(data, "big") >> (8 * len(data) - nbits)


def _to_bytes(value: int, nbits: int) -> bytes:
    nbytes = (nbits + 7) // 8
    return (value << (8 * nbytes - nbits)).to_bytes(nbytes, "big")


def chunk_bits(l: int, s: int) -> int:
    return -(-l // (s - 1))


def fragment_object(obj: bytes, s: int, rng: np.random.Generator | None = None,
                    nbits: int | None = None, l_nonce: int = L_NONCE):
    """Split an ``nbits``-long object into s-1 data fragments plus a nonce.

    Fragment 1 starts with a 32-bit field holding the object length so the
    zero padding of the last data fragment can be stripped.
    Returns ``(fragments, root)``.
    """
    if s < 2:
        raise InvalidParameter(f"need at least 2 fragments, got s={s}")
    if nbits is None:
        nbits = 8 * len(obj)
    if nbits <= 0 or len(obj) != (nbits + 7) // 8:
        raise InvalidInput("object length does not match nbits")
    if rng is None:
        rng = np.random.default_rng()
    c = chunk_bits(nbits, s)
    value = _to_int(obj, nbits) << (c * (s - 1) - nbits)
    mask = (1 << c) - 1
    chunks = []
    for j in range(s - 1):
        shift = c * (s - 2 - j)
        chunks.append((value >> shift) & mask)
    payloads, sizes = [], []
    for j, chunk in enumerate(chunks):
        if j == 0:
            payloads.append(_to_bytes((nbits << c) | chunk, c + LENGTH_FIELD_BITS))
            sizes.append(c + LENGTH_FIELD_BITS)
        else:
            payloads.append(_to_bytes(chunk, c))
            sizes.append(c)
    payloads.append(rng.bytes((l_nonce + 7) // 8))
    sizes.append(l_nonce)
    root, proofs = build_merkle(payloads, sizes)
    frags = [Fragment(i + 1, p, b, pr) for i, (p, b, pr) in enumerate(zip(payloads, sizes, proofs))]
    return frags, root


def object_bits(fragments: Sequence[Fragment]) -> int:
    first = min(fragments, key=lambda f: f.index)
    return _to_int(first.payload, first.nbits) >> (first.nbits - LENGTH_FIELD_BITS)


def reconstruct_object(fragments: Iterable[Fragment], root: bytes) -> bytes:
    by_index: dict[int, Fragment] = {}
    for f in fragments:
        if not verify_proof(root, f):
            raise ReconstructionError(f"fragment {f.index} does not verify against root")
        by_index[f.index] = f
    s = len(by_index)
    if s < 2 or sorted(by_index) != list(range(1, s + 1)):
        raise ReconstructionError(f"missing fragment indices: have {sorted(by_index)}")
    first = by_index[1]
    c = first.nbits - LENGTH_FIELD_BITS
    head = _to_int(first.payload, first.nbits)
    nbits = head >> c
    value = head & ((1 << c) - 1)
    for i in range(2, s):
        f = by_index[i]
        if f.nbits != c:
            raise ReconstructionError(f"fragment {i} has {f.nbits} bits, expected {c}")
        value = (value << c) | _to_int(f.payload, f.nbits)
    total = c * (s - 1)
    if nbits < 1 or chunk_bits(nbits, s) != c:
        raise ReconstructionError("length field inconsistent with fragment sizes")
    return _to_bytes(value >> (total - nbits), nbits)


def last_fragment_item(root: bytes, xs: Fragment) -> bytes:
    """Digest that committee members sign for the last fragment of ``root``."""
    return H(_LAST + root + xs.leaf())


# ---------------------------------------------------------------- signatures

def _sig_tag(item: bytes, signers: tuple[tuple[int, int], ...]) -> bytes:
    h = hashlib.shake_256(b"aggsig|" + item)
    for node, weight in signers:
        h.update(struct.pack(">IH", node, weight))
    return h.digest(SIG_TAG_BYTES)


@dataclass(frozen=True)
class AggregateSignature:
    item: bytes
    # sorted (node id, weight) pairs; the ordering doubles as the signer vector
    signers: tuple[tuple[int, int], ...] = ()
    tag: bytes = field(default=b"", compare=False)

    @property
    def weight(self) -> int:
        return sum(w for _, w in self.signers)

    @property
    def is_empty(self) -> bool:
        return not self.signers

    def signer_ids(self) -> tuple[int, ...]:
        return tuple(n for n, _ in self.signers)

    def contains(self, node: int) -> bool:
        return any(n == node for n, _ in self.signers)

    def signer_vector(self, coin_owners: Sequence[int]) -> int:
        """m-bit vector with bit j set when the owner of coin j signed."""
        ids = set(self.signer_ids())
        return sum(1 << j for j, owner in enumerate(coin_owners) if owner in ids)

    def wire_bits(self, m: int, l_sig: int = L_SIG) -> int:
        return l_sig + m


def make_signature(item: bytes, signers: Mapping[int, int]) -> AggregateSignature:
    pairs = tuple(sorted(signers.items()))
    return AggregateSignature(item, pairs, _sig_tag(item, pairs))


def add_my_sig(sig: AggregateSignature, me: int, weight: int) -> AggregateSignature:
    if weight < 1:
        raise InvalidSigner(f"node {me} holds no committee coin")
    if sig.contains(me):
        return sig
    signers = dict(sig.signers)
    signers[me] = weight
    return make_signature(sig.item, signers)


def _sig_rank(sig: AggregateSignature):
    return (-sig.weight, sig.signers)


def sigma_select(pool: Iterable[AggregateSignature], item: bytes) -> AggregateSignature:
    """Max-weight signature on ``item``; ties go to the smaller signer vector.

    Returns an empty signature (weight 0) when the pool holds nothing for item.
    """
    best = None
    for sig in pool:
        if sig.item != item:
            continue
        if best is None or _sig_rank(sig) < _sig_rank(best):
            best = sig
    return best if best is not None else AggregateSignature(item)


class SimulatedScheme:
    """Stand-in for a real aggregate multisignature scheme.

    Nodes register each item they sign. A signature verifies only if its tag
    matches, every signer's weight equals its committee weight and every signer
    actually signed the item, so nobody can claim a signer who never signed.
    """

    def __init__(self):
        self._signed: set[tuple[int, bytes]] = set()
        self.verifications = 0

    def sign(self, sig: AggregateSignature, me: int, weight: int) -> AggregateSignature:
        out = add_my_sig(sig, me, weight)
        self._signed.add((me, sig.item))
        return out

    def has_signed(self, node: int, item: bytes) -> bool:
        return (node, item) in self._signed

    def verify(self, sig: AggregateSignature, weights: Mapping[int, int]) -> bool:
        self.verifications += 1
        if sig.tag != _sig_tag(sig.item, sig.signers):
            return False
        for node, w in sig.signers:
            if weights.get(node, 0) != w or (node, sig.item) not in self._signed:
                return False
        return True


# ------------------------------------------------------------ byte encodings

def encode_fragment(f: Fragment) -> bytes:
    out = [struct.pack(">II", f.index, f.nbits), f.payload, struct.pack(">B", len(f.proof.path))]
    for sibling, left in f.proof.path:
        out.append(struct.pack(">B", int(left)) + sibling)
    return b"".join(out)


def decode_fragment(data: bytes) -> Fragment:
    index, nbits = struct.unpack_from(">II", data, 0)
    off = 8
    nbytes = (nbits + 7) // 8
    payload = data[off:off + nbytes]
    off += nbytes
    (depth,) = struct.unpack_from(">B", data, off)
    off += 1
    path = []
    for _ in range(depth):
        left = bool(data[off])
        path.append((data[off + 1:off + 1 + DIGEST_BYTES], left))
        off += 1 + DIGEST_BYTES
    if off != len(data):
        raise InvalidInput("trailing bytes in fragment encoding")
    return Fragment(index, payload, nbits, MerkleProof(index, tuple(path)))


def encode_signature(sig: AggregateSignature) -> bytes:
    out = [sig.item, struct.pack(">H", len(sig.signers))]
    for node, weight in sig.signers:
        out.append(struct.pack(">IH", node, weight))
    out.append(sig.tag or bytes(SIG_TAG_BYTES))
    return b"".join(out)


def decode_signature(data: bytes) -> AggregateSignature:
    item = data[:DIGEST_BYTES]
    (count,) = struct.unpack_from(">H", data, DIGEST_BYTES)
    off = DIGEST_BYTES + 2
    signers = []
    for _ in range(count):
        signers.append(struct.unpack_from(">IH", data, off))
        off += 6
    tag = data[off:off + SIG_TAG_BYTES]
    if off + SIG_TAG_BYTES != len(data):
        raise InvalidInput("trailing bytes in signature encoding")
    return AggregateSignature(item, tuple(signers), tag)
