"""Bandwidth-efficient Byzantine broadcast over sparse overlays, with a
committee-based blockchain layer on top."""

from .analysis import (BandwidthParams, SafetyParams, crypto_op_bounds, min_committee,
                       per_round_send_bound, safety_bound, throughput_estimate)
from .bcube import ChainConfig, CoinDistribution, CommitteeSpec, run_chain, select_committee
from .netsim import Simulation, run_invocation
from .overlaybb import ProtocolParams
from .topology import Topology, build_topology, clique, from_edges, line

__all__ = [
    "BandwidthParams", "SafetyParams", "crypto_op_bounds", "min_committee", "per_round_send_bound",
    "safety_bound", "throughput_estimate", "ChainConfig", "CoinDistribution", "CommitteeSpec",
    "run_chain", "select_committee", "Simulation", "run_invocation", "ProtocolParams", "Topology",
    "build_topology", "clique", "from_edges", "line",
]
