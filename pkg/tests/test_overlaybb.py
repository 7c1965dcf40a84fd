import numpy as np
import pytest

from bbchain.bcube import CommitteeSpec
from bbchain.crypto_kit import (AggregateSignature, Fragment, SimulatedScheme, fragment_object,
                                last_fragment_item, make_signature)
from bbchain.overlaybb import (INF, InvalidRole, ProtocolParams, RoundMessages, init_instance)

BROADCASTER, ME, PEER = 0, 1, 2


def setup(me_in_committee=True, s=3, d=2, broadcaster_weight=1):
    params = ProtocolParams(m=2, d=d, s=s, l=64)
    members = {BROADCASTER: broadcaster_weight}
    if me_in_committee:
        members[ME] = 1
    com = CommitteeSpec(0, (), members, BROADCASTER)
    scheme = SimulatedScheme()
    frags, root = fragment_object(b"8 bytes!", s, np.random.default_rng(3), l_nonce=params.l_nonce)
    root_sig = scheme.sign(AggregateSignature(root), BROADCASTER, broadcaster_weight)
    inst = init_instance(ME, params, com, scheme)
    return params, scheme, inst, root, root_sig, frags


def test_init_roles():
    params, scheme, inst, *_ = setup()
    assert not inst.all_root and not inst.all_frag and inst.t_root == INF
    com = CommitteeSpec(0, (), {BROADCASTER: 2}, BROADCASTER)
    b = init_instance(BROADCASTER, ProtocolParams(2, 2, 5, 64), com, scheme, b"abcdefgh",
                      np.random.default_rng(0))
    assert len(b.all_frag) == 5 and list(b.all_root) == [b.root]
    assert b._sigma(b.root).weight == 2  # two coins, one signature of weight 2
    with pytest.raises(InvalidRole):
        init_instance(BROADCASTER, ProtocolParams(2, 2, 5, 64), com, scheme)


def test_committee_member_accepts_and_resigns():
    params, scheme, inst, root, sig, _ = setup(True)
    inst.ingest(RoundMessages(roots=[(root, sig)]), BROADCASTER)
    out = inst.forward_merkle_root(3)  # 2*2*1 = 4 >= 3
    assert inst.root_accepted == {root} and inst.t_root == 3
    (sent_root, sent_sig), = out
    assert sent_root == root and sent_sig.contains(ME) and sent_sig.weight == 2
    assert scheme.verify(sent_sig, inst.weights)


def test_non_committee_forwards_without_accepting():
    params, scheme, inst, root, sig, _ = setup(False)
    inst.ingest(RoundMessages(roots=[(root, sig)]), BROADCASTER)
    out = inst.forward_merkle_root(3)  # 4 >= 3 + 2 fails
    assert not inst.root_accepted
    assert out == [(root, sig)]
    assert inst.all_push[root].score == 4 - 3


def test_empty_state_sends_nothing():
    _, _, inst, *_ = setup()
    msgs = inst.step(0)
    assert not msgs and not inst.all_push


def test_root_without_broadcaster_signature_is_dropped():
    params, scheme, inst, root, _, _ = setup()
    other = scheme.sign(AggregateSignature(root), ME, 1)
    inst.ingest(RoundMessages(roots=[(root, other)]), PEER)
    assert not inst.all_root and inst.discarded_roots == 1


def test_forerunner_then_last_fragment_acceptance():
    params, scheme, inst, root, sig, frags = setup(True, s=3, d=2)
    x1, x2, xs = frags
    inst.ingest(RoundMessages(roots=[(root, sig)], fragments=[(root, x1), (root, x2)]), BROADCASTER)
    out = inst.step(1)
    assert inst.t_root == 1
    assert out.fragments == [(root, x1)] and not out.last_frags  # one data fragment per round
    out = inst.step(2)
    assert out.fragments == [(root, x2)]
    assert not inst.step(3).fragments  # x_s not held yet
    xs_sig = scheme.sign(AggregateSignature(last_fragment_item(root, xs)), BROADCASTER, 1)
    inst.ingest(RoundMessages(last_frags=[(root, xs, xs_sig)]), BROADCASTER)
    out = inst.step(4)
    # t_frag = max(4, 1 + 2) = 4 and 2*2*1 = 4 >= 4 - 2
    assert inst.frag_accepted and inst.frag_accept_round == 4
    (_, sent_xs, sent_sig), = out.last_frags
    assert sent_xs == xs and sent_sig.contains(ME)
    assert inst.finalize() == b"8 bytes!"


def test_last_fragment_needs_prior_data_fragments_from_sender():
    params, scheme, inst, root, sig, frags = setup(True)
    xs = frags[-1]
    xs_sig = scheme.sign(AggregateSignature(last_fragment_item(root, xs)), BROADCASTER, 1)
    inst.ingest(RoundMessages(roots=[(root, sig)], fragments=[(root, f) for f in frags[:-1]],
                              last_frags=[(root, xs, xs_sig)]), BROADCASTER)
    assert inst.ignored_last == 1  # same round as the data fragments: too early


def test_threshold_clamped_at_zero():
    # committee member, t_root = 0, t = 1, s = 3: t_frag - (s-1) = 0 so weight 1 passes
    params, scheme, inst, root, sig, frags = setup(True, s=3, d=1)
    inst.ingest(RoundMessages(roots=[(root, sig)], fragments=[(root, f) for f in frags[:-1]]), BROADCASTER)
    inst.step(0)
    inst.step(1)
    xs = frags[-1]
    xs_sig = scheme.sign(AggregateSignature(last_fragment_item(root, xs)), BROADCASTER, 1)
    inst.ingest(RoundMessages(last_frags=[(root, xs, xs_sig)]), BROADCASTER)
    inst.step(2)
    assert inst.frag_accepted


def test_bad_fragment_blacklists_sender():
    params, scheme, inst, root, sig, frags = setup(True)
    x1 = frags[0]
    bad = Fragment(1, bytes([x1.payload[0] ^ 1]) + x1.payload[1:], x1.nbits, x1.proof)
    inst.ingest(RoundMessages(roots=[(root, sig)]), BROADCASTER)
    inst.ingest(RoundMessages(fragments=[(root, bad)]), PEER)
    out = inst.step(1)
    assert PEER in inst.blacklist and not out.fragments
    inst.ingest(RoundMessages(fragments=[(root, x1)]), PEER)  # ignored from now on
    assert not inst.all_frag.get((root, 1))


def test_forged_signature_blacklists_sender():
    params, scheme, inst, root, sig, _ = setup(True)
    forged = make_signature(root, {BROADCASTER: 1, ME: 1})  # ME never signed
    inst.ingest(RoundMessages(roots=[(root, forged)]), PEER)
    inst.ingest(RoundMessages(roots=[(root, sig)]), BROADCASTER)
    inst.step(1)
    assert PEER in inst.blacklist and BROADCASTER not in inst.blacklist
    assert inst.root_accepted == {root}


def test_duplicate_fragment_is_idempotent():
    params, scheme, inst, root, sig, frags = setup(True)
    for _ in range(3):
        inst.ingest(RoundMessages(fragments=[(root, frags[0])]), BROADCASTER)
    assert len(inst.all_frag[(root, 1)]) == 1


def test_finalize_conflict_and_empty():
    params, scheme, inst, root, sig, frags = setup(True)
    assert inst.finalize() is None
    other_frags, other = fragment_object(b"another!", 3, np.random.default_rng(4))
    other_sig = scheme.sign(AggregateSignature(other), BROADCASTER, 1)
    inst.ingest(RoundMessages(roots=[(root, sig), (other, other_sig)]), BROADCASTER)
    inst.step(1)
    assert len(inst.root_accepted) == 2
    inst.frag_accepted = True
    assert inst.finalize() is None


def test_params_bits():
    p = ProtocolParams(m=4, d=3, s=5, l=800)
    assert p.rounds == 2 * 3 * 4 + 5
    assert p.chunk_bits == 200
    assert p.root_msg_bits() == 256 + 768 + 4
