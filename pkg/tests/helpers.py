"""Random topology generators shared by the gossip tests."""
import random

from faasplane.events import Topology


def random_topology(rng: random.Random, n: int, extra: float = 1.5, below: float = 0.1, subscribed: float = 0.7,
                    connected_eligible: bool = False):
    """Connected random graph plus (subscribers, below-threshold peers).

    With ``connected_eligible`` the above-threshold subscribers induce a
    connected subgraph on their own.
    """
    peers = [f"p{i:02d}" for i in range(n)]
    order = peers[:]
    rng.shuffle(order)
    n_sub = max(2, int(n * subscribed))
    subs = set(order[:n_sub])
    n_below = int(n_sub * below)
    below_set = set(rng.sample(sorted(subs), n_below)) if n_below else set()
    edges = {}

    def add(a, b):
        if a != b:
            edges[tuple(sorted((a, b)))] = rng.randint(1, 5)

    if connected_eligible:
        elig = [p for p in order if p in subs and p not in below_set]
        for i in range(1, len(elig)):
            add(elig[i], rng.choice(elig[:i]))
        rest = [p for p in order if p not in elig]
        for p in rest:
            add(p, rng.choice(elig))
    else:
        for i in range(1, n):
            add(order[i], rng.choice(order[:i]))
    for _ in range(int(n * extra)):
        add(rng.choice(peers), rng.choice(peers))
    scores = {p: (-1 - rng.randint(0, 5) if p in below_set else 0) for p in peers}
    topo = Topology.from_edges([(a, b, w) for (a, b), w in sorted(edges.items())], scores, peers)
    return topo, subs, below_set


# acceptance results, printed again by the terminal summary hook in conftest
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, name: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} ({name}): {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line
