"""Closed-form calculators: safety probability, bandwidth bound, throughput,
crypto-operation rates and baseline throughput-to-bandwidth ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .crypto_kit import L_HASH, L_NONCE, L_SIG, tree_depth

ACCEPT_PROB = 0.86
POW_MEAN = 807.0
PRECOND = 0.9
BUDGET_FACTOR = 0.9


class DomainError(ValueError):
    pass


class NoSolution(ValueError):
    pass


@dataclass(frozen=True)
class SafetyParams:
    f: float
    m: int
    tau: int
    lam: int
    eps: float = 2.0 ** -30
    accept_prob: float = ACCEPT_PROB
    pow_mean: float = POW_MEAN

    def __post_init__(self):
        if not 0 <= self.f <= 0.99:
            raise DomainError(f"f must lie in [0, 0.99], got {self.f}")
        if min(self.m, self.tau, self.lam) < 1:
            raise DomainError("m, tau and lambda must be at least 1")


@dataclass(frozen=True)
class SafetyReport:
    bound: float
    committee_term: float
    challenge_term: float
    pow_term: float

    @property
    def failure(self) -> float:
        return self.committee_term + self.challenge_term + self.pow_term

    def adaptive_term(self, f: float, tau: int, lam: int, x: int) -> float:
        """Extra failure probability when corruption takes effect only after
        ``x`` epochs (mildly adaptive adversary); not part of ``bound``."""
        ft = f ** tau
        return lam * (ft + 1 - ACCEPT_PROB) ** (x - 2) / (PRECOND * (ACCEPT_PROB - ft))


def poisson_sf(mu: float, k: int) -> float:
    """Pr[X > k] for X ~ Poisson(mu), summed in log space."""
    if k < 0:
        return 1.0
    if mu == 0:
        return 0.0
    if k + 1 > mu:
        # upper tail: walk the pmf up from k+1 by the ratio mu/j
        j = k + 1
        log_p = j * math.log(mu) - mu - math.lgamma(j + 1)
        terms = []
        p = 1.0
        while True:
            terms.append(p)
            j += 1
            p *= mu / j
            if p < 1e-30 * math.fsum(terms):
                break
        return math.exp(log_p) * math.fsum(terms)
    # lower tail is the small side: Pr[X <= k], walking down from k
    j = k
    log_p = j * math.log(mu) - mu - math.lgamma(j + 1)
    terms = []
    p = 1.0
    while j >= 0:
        terms.append(p)
        p *= j / mu
        j -= 1
        if p < 1e-30 * math.fsum(terms):
            break
    return 1.0 - math.exp(log_p) * math.fsum(terms)


def safety_report(p: SafetyParams) -> SafetyReport:
    ft = p.f ** p.tau
    if ft >= p.accept_prob:
        raise DomainError(f"f^tau = {ft:.3g} must stay below {p.accept_prob}")
    denom = PRECOND * (p.accept_prob - ft)
    committee = p.lam * p.f ** p.m / denom
    challenge = p.lam * ft / denom
    pw = poisson_sf(p.pow_mean, p.lam)
    bound = 1.0 - math.fsum([committee, challenge, pw])
    return SafetyReport(bound, committee, challenge, pw)


def safety_bound(p: SafetyParams) -> float:
    """Lower bound on the probability that every committee up to a slot has
    an honest member. Assumes the previous epoch met the same event with
    probability above 0.9 (the caller's responsibility)."""
    return safety_report(p).bound


def min_committee(f: float, tau: int, lam: int, eps: float, accept_prob: float = ACCEPT_PROB,
                  pow_mean: float = POW_MEAN) -> int:
    """Smallest m whose safety bound reaches 1 - eps."""
    target = 1.0 - eps

    def ok(m):
        b = safety_bound(SafetyParams(f, m, tau, lam, eps, accept_prob, pow_mean))
        return max(b, 0.0) >= target

    # the committee term vanishes as m grows; check the limit first
    limit = safety_report(SafetyParams(f, 1, tau, lam, eps, accept_prob, pow_mean))
    if max(1.0 - limit.challenge_term - limit.pow_term, 0.0) < target and eps < 1:
        raise NoSolution(f"no committee size reaches 1-{eps:g} with tau={tau}, lambda={lam}; "
                         "raise tau or lambda")
    if ok(1):
        return 1
    lo, hi = 1, 2
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > 1 << 20:
            raise NoSolution("committee size search diverged")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class BandwidthParams:
    w: int
    l: int
    s: int
    m: int
    d: int = 1
    delta: float = 1.0
    gamma: int = 1
    B: float = 1.0
    l_hash: int = L_HASH
    l_sig: int = L_SIG
    l_nonce: int = L_NONCE

    def __post_init__(self):
        if self.s < 2 or min(self.w, self.m, self.d, self.gamma) < 1 or self.l < 0:
            raise ValueError(f"invalid bandwidth parameters {self}")

    @property
    def rounds(self) -> int:
        return 2 * self.d * self.m + self.s


@dataclass(frozen=True)
class SendBound:
    Y: int
    approx: float
    data_branch: bool

    @property
    def ratio(self) -> float:
        return self.Y / self.approx if self.approx else math.inf


def _terms(p: BandwidthParams):
    proof = (p.l_hash + 1) * tree_depth(p.s)
    roots = 2 * (p.l_hash + p.l_sig + p.m)
    last = p.l_nonce + proof + p.l_sig + p.m
    return roots, proof, last


def per_round_send_bound(p: BandwidthParams) -> SendBound:
    """Most bits an honest node sends in one round of one invocation."""
    roots, proof, last = _terms(p)
    data = -(-p.l // (p.s - 1)) + proof
    Y = p.w * (roots + max(data, last))
    return SendBound(Y, p.w * p.l / p.s, data >= last)


@dataclass(frozen=True)
class Throughput:
    l0: int
    T: float
    R: float


def throughput_estimate(p: BandwidthParams, budget_factor: float = 1.0) -> Throughput:
    """Largest object size l0 with gamma * Y(l0) within the round budget.

    ``p.l`` is ignored. T is in bits per second, R = T / B.
    """
    roots, proof, last = _terms(p)
    per_invocation = budget_factor * p.B * p.delta / p.gamma
    room = math.floor(per_invocation / p.w) - roots
    if room < last:
        return Throughput(0, 0.0, 0.0)
    l0 = (p.s - 1) * (room - proof)
    T = p.gamma * l0 / (p.rounds * p.delta)
    return Throughput(l0, T, T / p.B)


def slot_period(p: BandwidthParams, budget_factor: float = BUDGET_FACTOR) -> float:
    """Seconds between slots so that pipelined invocations fit the budget."""
    Y = per_round_send_bound(p).Y
    gamma = math.floor(budget_factor * p.B * p.delta / Y)
    if gamma < 1:
        raise NoSolution("a single invocation already exceeds the bandwidth budget")
    return p.rounds * p.delta / gamma


@dataclass(frozen=True)
class OpBounds:
    sign_adds: int
    sig_verify_pass: int
    sig_verify_fail: int
    merkle_verify_pass: int
    merkle_verify_fail: int
    hashes_per_proof: int

    @property
    def signature_ops(self) -> int:
        return self.sign_adds + self.sig_verify_pass + self.sig_verify_fail

    @property
    def hashes(self) -> int:
        return (self.merkle_verify_pass + self.merkle_verify_fail) * self.hashes_per_proof

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["signature_ops"] = self.signature_ops
        out["hashes"] = self.hashes
        return out


def crypto_op_bounds(gamma: int, delta: float, w_max: int, s: int = 800) -> OpBounds:
    """Per-second crypto operation budget of one node.

    Per round and invocation a node adds at most 3 signatures and passes at
    most 3 signature checks (two roots plus the last fragment) and 1 Merkle
    check (the single fragment it forwards). Failed checks blacklist the
    sender, so they are capped by the neighbor count.
    """
    per_sec = 3 * gamma / delta
    return OpBounds(
        sign_adds=math.ceil(per_sec),
        sig_verify_pass=math.ceil(per_sec),
        sig_verify_fail=w_max,
        merkle_verify_pass=math.ceil(gamma / delta),
        merkle_verify_fail=w_max,
        hashes_per_proof=tree_depth(s),
    )


BASELINES = ("dolev-strong", "chan", "hirt-raykov", "ganesh-patra", "nayak", "wan", "overlaybb")


def baseline_ttb(protocol: str, n: int = 0, f: float = 0.0, w: int = 1, d: int = 0, m: int = 1,
                 s: int | None = None) -> float:
    """Upper bound on the throughput-to-bandwidth ratio R of a protocol."""
    if protocol == "dolev-strong":
        # fn + d rounds, each carrying the object to w neighbors
        return 1.0 / (w * (f * n + d))
    if protocol == "chan":
        # 2dm rounds; a busy round still sends the object to w neighbors
        return 1.0 / (2 * d * m * w)
    if protocol in ("hirt-raykov", "ganesh-patra"):
        return 1.0 / n
    if protocol == "nayak":
        return 1.0 / (f * n + 1)
    if protocol == "wan":
        return 1.0 / (d * w)
    if protocol == "overlaybb":
        s = 2 * d * m if s is None else s
        return s / ((2 * d * m + s) * w)
    raise ValueError(f"unknown protocol {protocol!r}; known: {BASELINES}")
