import io
import json
from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone

from faasplane.sim.billing import billing_demo
from faasplane.sim.config import ConfigError, ScenarioConfig, apply_overrides
from faasplane.sim.engine import MissingBeaconError, arrival_ticks, run, run_batch
from faasplane.sim.estimator import LoadBalancingSimulator
from faasplane.sim.report import (
    TABLE_ROWS,
    MetricRow,
    read_metrics_csv,
    render_csv,
    render_text,
    summarize,
    write_metrics_csv,
)
from faasplane.sim.verify import check_chain, dump_beacons, load_beacons, replay_verify


def cfg(**sim):
    return ScenarioConfig.from_dict({"seed": sim.pop("seed", "t"), "sim": sim})


# -- config ------------------------------------------------------------------------


def test_defaults():
    c = ScenarioConfig()
    assert c.sim.num_data_centers == 6 and c.sim.capacity == 1 and c.sim.choice2_multiplier == 3
    assert c.ledger.min_stake == 10 and c.billing.cycle_length == 1000
    assert c.arrival_rate() == pytest.approx(0.95 * 6)


def test_json_round_trip():
    c = cfg(num_data_centers=4, policy="none")
    assert ScenarioConfig.from_dict(json.loads(c.to_json())) == c


def test_overrides_dotted_and_bare():
    c = ScenarioConfig().with_overrides(["sim.total_calls=50", "policy=none", "seed=abc"])
    assert (c.sim.total_calls, c.sim.policy, c.seed) == (50, "none", "abc")


def test_override_last_wins():
    assert ScenarioConfig().with_overrides(["policy=none", "policy=choice2"]).sim.policy == "choice2"


@pytest.mark.parametrize("override,key", [
    ("sim.bogus=1", "sim.bogus"),
    ("nosuch=1", "nosuch"),
    ("policy=fastest", "sim.policy"),
    ("num_data_centers=1", "sim.num_data_centers"),
    ("gateways_per_dc=9", "sim.gateways_per_dc"),
    ("capacity=0", "sim.capacity"),
    ("payment.target_distribution=[0.5,0.6,0,0,0,0]", "payment.target_distribution"),
])
def test_bad_config_names_key(override, key):
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig().with_overrides([override])
    assert exc.value.key == key


def test_override_syntax():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_load_missing(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.load(tmp_path / "none.json")


# -- engine --------------------------------------------------------------------------


def test_unbounded_capacity_no_queueing():
    m = run(cfg(num_data_centers=2, capacity=None, policy="none", total_calls=500)).metrics
    assert m.average_queue_time == 0


@pytest.mark.parametrize("policy", ["default", "choice2", "none"])
def test_single_call(policy):
    assert run(cfg(policy=policy, total_calls=1)).metrics.average_queue_time == 0


def test_hand_simulated_queue():
    c = cfg(num_data_centers=2, capacity=1, policy="none", total_calls=4)
    res = run(c, arrivals=[(0, 0)] * 4)
    assert res.metrics.average_queue_time == 1.5
    assert res.metrics.max_queue_time == 3
    assert res.metrics.dc_counts == [4, 0]


def test_constant_rate_arrivals():
    c = cfg(arrival_rate=2.5, total_calls=6)
    assert arrival_ticks(c) == [0, 0, 0, 1, 1, 2]


@pytest.mark.parametrize("policy", ["default", "choice2", "none"])
@pytest.mark.parametrize("mode", ["random", "single_dc"])
def test_conservation(policy, mode):
    m = run(cfg(policy=policy, arrival_mode=mode, total_calls=700, num_data_centers=4)).metrics
    assert sum(m.dc_counts) == 700 == m.total_calls == sum(m.gateway_counts.values())


def test_policy_none_stays_local():
    res = run(cfg(policy="none", total_calls=300))
    assert all(d.chosen_dc == d.receiving_dc and d.candidate_dc is None for d in res.decisions)


def test_single_dc_mode_receives_at_zero():
    res = run(cfg(arrival_mode="single_dc", total_calls=100))
    assert {d.receiving_dc for d in res.decisions} == {0}


def test_default_never_forwards_to_busier_cached():
    res = run(cfg(total_calls=2000))
    assert all(d.candidate_dc is not None for d in res.decisions)
    assert res.metrics.forwarded == sum(d.chosen_dc != d.receiving_dc for d in res.decisions)


def test_run_deterministic():
    a, b = run(cfg(total_calls=500)), run(cfg(total_calls=500))
    assert a.decisions == b.decisions and a.metrics == b.metrics
    assert [x.hash for x in a.blocks] == [x.hash for x in b.blocks]


def test_runs_use_distinct_chains():
    a, b = run(cfg(total_calls=200), 0), run(cfg(total_calls=200), 1)
    assert a.blocks[0].hash != b.blocks[0].hash


def test_batch_runs1_equals_single_run():
    c = cfg(total_calls=400, runs=1)
    assert run_batch(c).metrics[0] == run(c).metrics


def test_batch_deterministic_and_parallel():
    c = cfg(total_calls=400, runs=3)
    a, b = run_batch(c), run_batch(c, n_jobs=2)
    assert a.metrics == b.metrics and a.average_queue_time == b.average_queue_time


def test_stale_cache_ignores_feed():
    frozen = [run(cfg(total_calls=800, refresh_period=None, oracle_noise=n)).decisions for n in (0, 5)]
    assert frozen[0] == frozen[1]
    live = [run(cfg(total_calls=800, refresh_period=1, oracle_noise=n)).decisions for n in (0, 5)]
    assert live[0] != live[1]


def test_default_beats_none_under_skew():
    for k in (6, 8, 10):
        c = cfg(num_data_centers=k, total_calls=3000, runs=1)
        none_skew = run(c.with_overrides(["policy=none", "arrival_mode=single_dc"])).metrics.average_queue_time
        assert none_skew > run(c).metrics.average_queue_time


def test_engine_options_verify():
    c = cfg(total_calls=500, max_hops=3, forward_delay=2, service_time_max=3, blocks_interval=4, oracle_noise=1)
    res = run(c)
    assert sum(res.metrics.dc_counts) == 500
    assert replay_verify(res.decisions, res.blocks, c).ok


# -- verify ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def honest():
    c = cfg(total_calls=400)
    return c, run(c)


def test_verify_honest(honest):
    c, res = honest
    assert replay_verify(res.decisions, res.blocks, c).ok


def test_verify_altered_chosen_dc(honest):
    c, res = honest
    trace = list(res.decisions)
    d = trace[57]
    trace[57] = replace(d, chosen_dc=(d.chosen_dc + 1) % 6)
    out = replay_verify(trace, res.blocks, c)
    assert not out.ok and out.call_id == d.call_id and out.field == "chosen_dc"


def test_verify_cross_seed(honest):
    c, res = honest
    other = run(c.with_overrides(["seed=different"]))
    out = replay_verify(other.decisions, res.blocks, c)
    assert not out.ok and out.index == 0


def test_verify_truncated_beacons(honest):
    c, res = honest
    with pytest.raises(MissingBeaconError, match="missing beacon height"):
        replay_verify(res.decisions, res.blocks[:5], c)


def test_verify_tampered_chain(honest):
    c, res = honest
    blocks = list(res.blocks)
    blocks[3] = replace(blocks[3], state_digest=bytes(32))
    assert check_chain(blocks) is not None
    assert not replay_verify(res.decisions, blocks, c).ok


def test_verify_dropped_decision(honest):
    c, res = honest
    assert not replay_verify(res.decisions[:-1], res.blocks, c).ok


def test_beacon_json_round_trip(tmp_path, honest):
    _, res = honest
    p = tmp_path / "b.json"
    p.write_text(dump_beacons(res.blocks, 0))
    assert load_beacons(p) == res.blocks


# -- report --------------------------------------------------------------------------


def test_metrics_csv_round_trip():
    m = [run(cfg(total_calls=100)).metrics]
    rows = read_metrics_csv(io.StringIO(write_metrics_csv(m)))
    assert rows == [MetricRow.from_metrics(m[0])]


def fake_row(policy, mode, k, value):
    return MetricRow(0, policy, mode, k, 10, value, 0, 0, 0, (10,), "")


def test_summarize_one_row():
    rows = summarize([fake_row("default", "random", 6, 2.0)])
    assert len(rows) == 1
    text = render_text(rows)
    assert "2.000" in text


def test_full_grid_fifteen_cells():
    metrics = [fake_row(p, a, k, 1.0 + i) for i, (p, a, _) in enumerate(TABLE_ROWS) for k in (6, 8, 10)]
    out = render_csv(summarize(metrics))
    lines = out.strip().split("\n")
    assert lines[0] == "scenario,6 data centers,8 data centers,10 data centers"
    cells = [c for line in lines[1:] for c in line.split(",")[1:]]
    assert len(cells) == 15 and all(cells)
    assert render_csv(summarize(metrics)) == out


def test_blank_cells():
    out = render_csv(summarize([fake_row("none", "random", 8, 3.0)]))
    assert out.split("\n")[1].endswith(",")


# -- estimator -----------------------------------------------------------------------


def test_estimator_fit_score():
    est = LoadBalancingSimulator(total_calls=300, runs=2, num_data_centers=3)
    est.fit()
    assert est.score() == -est.average_queue_time_
    assert est.dc_counts_.sum() == 300
    assert clone(est).get_params() == est.get_params()


def test_estimator_arrival_table():
    est = LoadBalancingSimulator(policy="none", num_data_centers=2, runs=1)
    est.fit(np.array([[0, 0], [0, 0], [0, 0], [0, 0]]))
    assert est.average_queue_time_ == 1.5
    assert list(est.predict(np.array([[0, 1], [0, 1]]))) == [1, 1]


def test_estimator_rejects_bad_table():
    with pytest.raises(ValueError):
        LoadBalancingSimulator().fit(np.array([[3], [1]]))


# -- billing walk-through -------------------------------------------------------------


def test_billing_demo_conserves():
    c = ScenarioConfig.from_dict({
        "seed": "b",
        "sim": {"num_data_centers": 3, "gateways_per_dc": 2, "total_calls": 1500, "runs": 1},
        "billing": {"deposit": 400, "users": 3, "watermark_fraction": 0.1, "cycle_length": 100},
    })
    report, led = billing_demo(c)
    assert report.accepted + report.rejected_deposit + report.rejected_token == 1500
    assert report.billed == report.accepted == 1200 and report.rejected_deposit == 300
    assert all(v == 0 for v in report.user_deposits.values())
    # supply only moves by the weighting difference
    assert report.supply_after - report.supply_before == report.credited - report.billed
    assert sum(led.gateway_balances.values()) == report.credited


def test_billing_demo_expired_tokens():
    c = ScenarioConfig.from_dict({"seed": "b", "sim": {"num_data_centers": 2, "total_calls": 300, "runs": 1}})
    report, _ = billing_demo(c, token_ttl=20)
    assert report.rejected_token > 0
    assert report.accepted == report.billed
