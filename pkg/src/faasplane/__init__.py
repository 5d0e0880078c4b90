"""Deterministic multi-cloud FaaS control plane: ledger, routing, gossip, billing, simulator."""

__version__ = "0.1.0"
