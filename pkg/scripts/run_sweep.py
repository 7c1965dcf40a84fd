"""Invocation sweep over network sizes, corruption fractions and adversaries.

Writes one JSON line per run and prints violation counts per cell.

    python scripts/run_sweep.py --seeds 20 --out sweep.jsonl
"""

import argparse
import json
from collections import Counter

from bbchain.adversary import adversary_catalog
from bbchain.bcube import CoinDistribution, select_committee
from bbchain.crypto_kit import hash2
from bbchain.netsim import run_invocation
from bbchain.overlaybb import ProtocolParams
from bbchain.topology import TopologyError, build_topology


def topology_for(n, f, seed):
    target, cap = (min(6, n - 3), min(9, n - 1)) if n < 20 else (5, 10)
    for attempt in range(20):
        try:
            return build_topology(n, target, cap, f, seed + 7919 * attempt)
        except TopologyError:
            continue
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 50])
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.5, 0.7])
    ap.add_argument("--strategies", nargs="+", default=sorted(adversary_catalog()))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--s", type=int, default=4)
    ap.add_argument("--payload-bytes", type=int, default=32)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    sink = open(args.out, "w") if args.out else None
    tally = Counter()
    for n in args.sizes:
        for f in args.fractions:
            for seed in range(args.seeds):
                topo = topology_for(n, f, seed)
                if topo is None:
                    continue
                params = ProtocolParams(m=args.m, d=topo.d, s=args.s, l=8 * args.payload_bytes)
                com = select_committee(hash2(seed.to_bytes(8, "big")), seed, CoinDistribution.one_coin_each(n), args.m)
                for strategy in args.strategies:
                    r = run_invocation(topo, params, com, strategy, seed)
                    o = r.outcome
                    row = {"n": n, "f": f, "seed": seed, "strategy": strategy,
                           "committee_has_honest": o.committee_has_honest,
                           "broadcaster_honest": o.broadcaster_honest,
                           "agreement": o.agreement, "validity": o.validity,
                           "finalized_round": o.finalized_round, "invocation_rounds": params.rounds,
                           "bound_violations": len(r.sim.bound_violations()),
                           "peak_fraction": round(r.sim.peak_fraction(), 4)}
                    cell = (n, f)
                    tally[cell, "runs"] += 1
                    tally[cell, "agreement"] += o.committee_has_honest and not o.agreement
                    tally[cell, "validity"] += o.broadcaster_honest and not o.validity
                    tally[cell, "bandwidth"] += row["bound_violations"] > 0
                    if sink:
                        sink.write(json.dumps(row, sort_keys=True) + "\n")
    if sink:
        sink.close()
    for n in args.sizes:
        for f in args.fractions:
            c = (n, f)
            print(f"n={n:3d} f={f:.2f} runs={tally[c, 'runs']:5d} agreement={tally[c, 'agreement']} "
                  f"validity={tally[c, 'validity']} bandwidth={tally[c, 'bandwidth']}")


if __name__ == "__main__":
    main()
