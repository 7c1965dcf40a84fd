"""Print the analytic quantities: committee size, send bound, TTB ratio, op bounds, baselines."""

import json

from bbchain.analysis import (BandwidthParams, SafetyParams, baseline_ttb, crypto_op_bounds, min_committee,
                              per_round_send_bound, safety_bound, throughput_estimate)

EPS = 2.0 ** -30


def main():
    report = {}
    report["committee"] = {
        f: {"min_m": min_committee(f, 91, 1000, EPS)} for f in (0.4, 0.5, 0.6, 0.7)
    }
    report["committee"][0.7]["bound_at_79"] = safety_bound(SafetyParams(0.7, 79, 91, 1000))

    y = per_round_send_bound(BandwidthParams(w=40, l=16_000_000, s=800, m=80))
    report["send_bound"] = {"Y": y.Y, "w_l_over_s": y.approx, "ratio": y.ratio}

    report["ttb"] = {}
    for w in (10, 20, 40):
        rs = [throughput_estimate(BandwidthParams(w=w, l=0, s=960, m=80, d=6, delta=12, gamma=g, B=20e6)).R
              for g in (1, 2, 10)]
        report["ttb"][w] = {"R": rs, "half_over_w": 1 / (2 * w)}

    tp = throughput_estimate(BandwidthParams(w=42, l=0, s=800, m=80, d=6, delta=12, gamma=217, B=20e6), 0.9)
    report["deployment_throughput_bps"] = tp.T
    report["ops"] = crypto_op_bounds(217, 12, 42).as_dict()
    report["baselines"] = {
        "dolev-strong": baseline_ttb("dolev-strong", n=10_000, f=0.7, w=40, d=6),
        "hirt-raykov": baseline_ttb("hirt-raykov", n=10_000),
        "wan": baseline_ttb("wan", w=40, d=6),
        "overlaybb": baseline_ttb("overlaybb", w=40, d=6, m=80),
    }
    print(json.dumps(report, indent=2, default=str))


if __name__ == "__main__":
    main()
