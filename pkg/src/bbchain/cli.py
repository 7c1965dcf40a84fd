"""Command line front end: simulate, analyze, params, sweep.

Exit codes: 0 success, 2 bad config or arguments, 3 an invariant was violated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis
from .adversary import adversary_catalog
from .bcube import (ChainConfig, CoinDistribution, ScheduleError, epoch_schedule, run_chain,
                    select_committee)
from .config import ConfigError, ExperimentConfig, load, override
from .crypto_kit import hash2
from .netsim import run_invocation
from .overlaybb import ProtocolParams
from .topology import TopologyError, build_topology

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 2, 3


# ---------------------------------------------------------------- builders

def make_topology(cfg: ExperimentConfig, seed: int | None = None):
    t = cfg.topology
    return build_topology(t.n, t.target_degree, t.max_degree, t.f, cfg.seed if seed is None else seed)


def make_chain_config(cfg: ExperimentConfig, topo) -> ChainConfig:
    c, p = cfg.chain, cfg.protocol
    base = ChainConfig(topology=topo, m=p.m, s=p.s, slot_period=1, rho=c.rho or 2, tau=c.tau,
                       epochs=c.epochs, payload_bytes=p.payload_bytes, strategy=cfg.strategy,
                       seed=cfg.seed, d_slack=p.d_slack, honest_pow_mean=c.honest_pow_mean,
                       adversary_multiplier=c.adversary_multiplier, adversary_pow=c.adversary_pow,
                       zero_pow_epochs=tuple(c.zero_pow_epochs), p_bad=cfg.topology.p_bad,
                       bad_mode=cfg.topology.bad_mode)
    length = base.invocation_rounds
    base.slot_period = -(-length // c.slots_in_flight)
    if c.rho:
        epoch_schedule(0, c.rho, base.slot_period, length, c.tau, base.d)
        return base
    rho = c.tau + 1
    while True:
        try:
            epoch_schedule(0, rho, base.slot_period, length, c.tau, base.d)
            break
        except ScheduleError:
            rho += 1
    base.rho = rho
    return base


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------- simulate

def simulate(cfg: ExperimentConfig, out_dir: Path | None) -> tuple[dict, bool]:
    """Run one experiment. Returns (summary, all invariants held)."""
    topo = make_topology(cfg)
    if cfg.chain.mode == "invocation":
        return _simulate_invocation(cfg, topo, out_dir)
    ccfg = make_chain_config(cfg, topo)
    ccfg.trace = out_dir is not None
    res = run_chain(ccfg)
    L = ccfg.invocation_rounds
    prefix = res.agreement_prefix()
    violations = res.sim.bound_violations()
    ok_epochs = [e for e in res.epochs if max(e.schedule.candidate_slots) < prefix]
    beacons_ok = all(e.beacon_agreed and e.challenge_agreed for e in ok_epochs)
    latency_ok = all(x == L for x in res.latencies)
    ok = res.chains_agree() and beacons_ok and latency_ok and not violations
    span = ccfg.slots * ccfg.slot_period
    summary = {
        "config_hash": cfg.digest(),
        "name": cfg.name,
        "mode": "chain",
        "seed": cfg.seed,
        "strategy": cfg.strategy,
        "n": topo.n,
        "honest": len(topo.honest),
        "d": ccfg.d,
        "w": topo.w,
        "invocation_rounds": L,
        "slot_period_rounds": ccfg.slot_period,
        "rho": ccfg.rho,
        "slots": ccfg.slots,
        "agreement_prefix": prefix,
        "chains_agree": res.chains_agree(),
        "beacons_agree_where_guaranteed": beacons_ok,
        "confirmation_latency_rounds": sorted(set(res.latencies)),
        "confirmed_bits": res.confirmed_bits(),
        "throughput_bits_per_round": res.confirmed_bits() / span,
        "max_round_bytes": max((max(b.values(), default=0) for b in res.sim.sent_bits), default=0) // 8,
        "bound_violations": len(violations),
        "peak_fraction_of_bound": round(res.sim.peak_fraction(), 6),
        "epochs": [{"epoch": e.epoch, "beacon_agreed": e.beacon_agreed, "reused": e.reused,
                    "challenge_agreed": e.challenge_agreed, "predictable": e.predictable,
                    "honest_solutions": e.honest_solutions, "adversary_solutions": e.adversary_solutions}
                   for e in res.epochs],
        "ok": ok,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ref = res.chains[topo.honest[0]]
        _write_jsonl(out_dir / "chain.jsonl", (
            {"config_hash": summary["config_hash"], "slot": k, "latency": res.latencies[k],
             "committee_has_honest": res.committee_honest[k],
             "block": blk.encode().hex() if blk is not None else None}
            for k, blk in enumerate(ref)))
        _write_jsonl(out_dir / "trace.jsonl", res.sim.records)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary, ok


def _simulate_invocation(cfg, topo, out_dir):
    p = cfg.protocol
    params = ProtocolParams(m=p.m, d=topo.d + p.d_slack, s=p.s, l=8 * p.payload_bytes)
    com = select_committee(hash2(b"genesis"), cfg.seed, CoinDistribution.one_coin_each(topo.n), p.m)
    r = run_invocation(topo, params, com, cfg.strategy, cfg.seed, p_bad=cfg.topology.p_bad,
                       bad_mode=cfg.topology.bad_mode, trace=out_dir is not None)
    o = r.outcome
    violations = r.sim.bound_violations()
    agree = o.agreement or not o.committee_has_honest
    valid = o.validity or not o.broadcaster_honest
    ok = agree and valid and o.finalized_round == params.rounds and not violations
    summary = {
        "config_hash": cfg.digest(), "name": cfg.name, "mode": "invocation", "seed": cfg.seed,
        "strategy": cfg.strategy, "n": topo.n, "d": params.d, "w": topo.w,
        "committee_has_honest": o.committee_has_honest, "broadcaster_honest": o.broadcaster_honest,
        "agreement": o.agreement, "validity": o.validity, "delivered": o.delivered,
        "finalized_round": o.finalized_round, "invocation_rounds": params.rounds,
        "bound_bits": r.bound, "max_round_bytes": r.max_bits() // 8,
        "bound_violations": len(violations), "ok": ok,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out_dir / "trace.jsonl", r.sim.records)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary, ok


# ---------------------------------------------------------------- analyze / params

def analyze(cfg: ExperimentConfig) -> dict:
    a = cfg.analysis
    safety = {"f": a.f, "lam": a.lam, "tau": a.tau, "eps": a.eps}
    try:
        m_min = analysis.min_committee(a.f, a.tau, a.lam, a.eps)
    except analysis.NoSolution as exc:
        m_min, safety["min_committee_error"] = None, str(exc)
    m = a.m or m_min or 1
    rep = analysis.safety_report(analysis.SafetyParams(a.f, m, a.tau, a.lam, a.eps))
    safety.update({"m": m, "min_committee": m_min, "bound": rep.bound, "failure": rep.failure,
                   "committee_term": rep.committee_term, "challenge_term": rep.challenge_term,
                   "pow_term": rep.pow_term, "meets_target": rep.bound >= 1 - a.eps})
    s = a.s or 2 * a.d * m
    bw = analysis.BandwidthParams(w=a.w, l=a.l, s=s, m=m, d=a.d, delta=a.delta, gamma=a.gamma,
                                  B=a.bandwidth_bps)
    y = analysis.per_round_send_bound(bw)
    tp = analysis.throughput_estimate(bw, a.budget_factor)
    ops = analysis.crypto_op_bounds(a.gamma, a.delta, a.w, s)
    baselines = {name: analysis.baseline_ttb(name, n=a.n, f=a.f, w=a.w, d=a.d, m=m, s=s)
                 for name in analysis.BASELINES}
    return {
        "config_hash": cfg.digest(),
        "safety": safety,
        "bandwidth": {"s": s, "Y_bits": y.Y, "approx_wl_over_s": y.approx, "data_branch": y.data_branch,
                      "l0_bits": tp.l0, "throughput_bps": tp.T, "R": tp.R, "R_reference_1_over_2w": 1 / (2 * a.w)},
        "crypto_ops_per_second": ops.as_dict(),
        "baseline_ttb": baselines,
    }


def recommend(f: float, eps: float, lam: int, tau: int, d: int, w: int, l: int, bandwidth_bps: float,
              delta: float, s: int | None = None, budget_factor: float = analysis.BUDGET_FACTOR) -> dict:
    m = analysis.min_committee(f, tau, lam, eps)
    s = s or max(2 * d * m, 2)
    bw = analysis.BandwidthParams(w=w, l=l, s=s, m=m, d=d, delta=delta, B=bandwidth_bps)
    period = analysis.slot_period(bw, budget_factor)
    gamma = round(bw.rounds * delta / period)
    return {"m": m, "s": s, "invocation_rounds": bw.rounds, "gamma": gamma, "slot_period_s": period,
            "Y_bits": analysis.per_round_send_bound(bw).Y}


# ---------------------------------------------------------------- sweep

def sweep(cfg: ExperimentConfig, seeds: int, strategies: list[str], out_dir: Path | None) -> tuple[dict, bool]:
    rows, counts = [], {"runs": 0, "agreement": 0, "validity": 0, "termination": 0, "bandwidth": 0}
    p = cfg.protocol
    for i in range(seeds):
        seed = cfg.seed + i
        try:
            topo = make_topology(cfg, seed)
        except TopologyError:
            continue
        params = ProtocolParams(m=p.m, d=topo.d + p.d_slack, s=p.s, l=8 * p.payload_bytes)
        com = select_committee(hash2(seed.to_bytes(8, "big")), seed, CoinDistribution.one_coin_each(topo.n), p.m)
        for strat in strategies:
            r = run_invocation(topo, params, com, strat, seed)
            o = r.outcome
            row = {"seed": seed, "strategy": strat, "committee_has_honest": o.committee_has_honest,
                   "broadcaster_honest": o.broadcaster_honest,
                   "agreement_ok": o.agreement or not o.committee_has_honest,
                   "validity_ok": o.validity or not o.broadcaster_honest,
                   "termination_ok": o.finalized_round == params.rounds,
                   "bandwidth_ok": not r.sim.bound_violations()}
            counts["runs"] += 1
            for key in ("agreement", "validity", "termination", "bandwidth"):
                counts[key] += not row[f"{key}_ok"]
            rows.append(row)
    summary = {"config_hash": cfg.digest(), "seeds": seeds, "strategies": strategies,
               "violations": {k: v for k, v in counts.items() if k != "runs"}, "runs": counts["runs"]}
    ok = not any(summary["violations"].values())
    summary["ok"] = ok
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out_dir / "sweep.jsonl", rows)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary, ok


# ---------------------------------------------------------------- entry

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbchain", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("simulate", "analyze", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--strategy", choices=list(adversary_catalog()))
        if name == "sweep":
            sp.add_argument("--seeds", type=int, default=10)
    sp = sub.add_parser("params")
    sp.add_argument("--f", type=float, required=True)
    sp.add_argument("--eps", type=float, default=2.0 ** -30)
    sp.add_argument("--lam", type=int, default=1000)
    sp.add_argument("--tau", type=int, default=91)
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--w", type=int, default=40)
    sp.add_argument("--l", type=int, default=16_000_000, help="block size in bits")
    sp.add_argument("--bandwidth", type=float, default=20e6, help="bits per second")
    sp.add_argument("--delta", type=float, default=12.0, help="round length in seconds")
    sp.add_argument("--s", type=int)
    sp.add_argument("--budget-factor", type=float, default=analysis.BUDGET_FACTOR)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "params":
            out = recommend(args.f, args.eps, args.lam, args.tau, args.d, args.w, args.l, args.bandwidth,
                            args.delta, args.s, args.budget_factor)
            print(json.dumps(out, indent=2, sort_keys=True))
            return EXIT_OK
        cfg = override(load(args.config), seed=args.seed, strategy=args.strategy)
        out_dir = Path(args.out_dir) if args.out_dir else None
        if args.cmd == "analyze":
            report = analyze(cfg)
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                (out_dir / "analysis.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
        if args.cmd == "simulate":
            summary, ok = simulate(cfg, out_dir)
        else:
            strategies = [args.strategy] if args.strategy else list(adversary_catalog())
            summary, ok = sweep(cfg, args.seeds, strategies, out_dir)
        print(json.dumps(summary, indent=2, sort_keys=True))
        if not ok:
            print("invariant violation", file=sys.stderr)
            return EXIT_VIOLATION
        return EXIT_OK
    except (ConfigError, ScheduleError, TopologyError, analysis.NoSolution, analysis.DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
