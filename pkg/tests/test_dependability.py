import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depsolar.config import FaultSpec, ScenarioConfig
from depsolar.dependability import (BROADCAST, CapacityError, ControllerNode, PerfVars,
                                    PlantGateway, ProtocolViolation, Role, StaleStateError,
                                    SwitchoverEvent, assign_plants, availability, claim_token,
                                    claim_winner, detect_switchover_event, node_tick,
                                    restore_state)
from depsolar.dissipativity import SupplyRateParams
from depsolar.messages import MessageKind, ProtocolMessage
from depsolar.mpc import MpcConfig
from depsolar.runner import run_scenario


def make_node(nid, duty=(), plants=(1,), peers=(1, 2), model=None, **kw):
    from depsolar.plant import TrackerParams, make_tracker_model
    model = model or make_tracker_model(TrackerParams())
    return ControllerNode(nid, model, MpcConfig.default(), SupplyRateParams.default(),
                          {p: 1000 + p for p in plants}, duty_plants=duty, peers=peers, **kw)


class Wire:
    """Builds messages with increasing seq numbers per (sender, kind)."""

    def __init__(self):
        self.seq = {}

    def __call__(self, kind, sender, epoch, t, body):
        k = (sender, kind)
        self.seq[k] = self.seq.get(k, 0) + 1
        return ProtocolMessage(kind, sender, epoch, self.seq[k], float(t), body)

    def heartbeat(self, sender, t, plants=(1,), epochs=(1,), claim_at=(0.0,)):
        return self(MessageKind.HEARTBEAT, sender, max(epochs), t,
                    {"plants": list(plants), "epochs": list(epochs), "claim_at": list(claim_at)})

    def perf(self, sender, t, step, epoch=1, x=(10.0, 10.0), x_prev=(9.55, 9.55), pid=1):
        pv = PerfVars(pid, [45, 45], x, x_prev, [0.45, 0.45], [0.45, 0.45], x, 0.0, step)
        return self(MessageKind.PERF_VARS, sender, epoch, t, pv.to_body())

    def sensor(self, pid, t, step, x=(10.0, 10.0)):
        return self(MessageKind.SENSOR, 1000 + pid, 1, t,
                    {"plant_id": pid, "step": step, "x": list(x), "y": list(x), "ref": [45.0, 45.0]})


def kinds(out):
    return [m.kind for _, m in out]


def test_quiescent_standby_stays_silent():
    node, w = make_node(2), Wire()
    for k in range(1, 300):
        t = 100.0 * k
        inbox = [w.heartbeat(1, t), w.perf(1, t, k // 10)]
        if k % 10 == 0:
            inbox.append(w.sensor(1, t, k // 10))
        out, actions = node.tick(t + 40, inbox)
        assert out == [] and actions == {}
    assert node.role is Role.STANDBY


def test_timeout_triggers_claim_for_next_epoch():
    node, w = make_node(2), Wire()
    node.tick(500.0, [w.heartbeat(1, 500.0), w.perf(1, 500.0, 0)])
    assert node.tick(1499.0)[0] == []
    out, _ = node.tick(1500.0)
    assert kinds(out) == [MessageKind.TOKEN_CLAIM]
    dst, claim = out[0]
    assert dst is BROADCAST and claim.epoch == 2 and claim.body["event"] == "COMM_TIMEOUT"


def test_duty_heartbeat_carries_one_perf_vars_per_plant():
    node, w = make_node(1, duty=(1, 2), plants=(1, 2)), Wire()
    node.tick(0.0, [w.sensor(1, 0.0, 0), w.sensor(2, 0.0, 0)])
    out, _ = node.tick(100.0)
    assert sorted(kinds(out)) == sorted([MessageKind.HEARTBEAT, MessageKind.PERF_VARS, MessageKind.PERF_VARS])
    perf_plants = sorted(m.body["plant_id"] for _, m in out if m.kind is MessageKind.PERF_VARS)
    assert perf_plants == [1, 2]


def test_duty_sends_control_to_plant_on_new_sensor():
    node, w = make_node(1, duty=(1,)), Wire()
    out, actions = node.tick(0.0, [w.sensor(1, 0.0, 0, x=(0.0, 0.0))])
    ctrl = [(d, m) for d, m in out if m.kind is MessageKind.CONTROL]
    assert len(ctrl) == 1 and ctrl[0][0] == 1001
    np.testing.assert_allclose(actions[1], [0.45, 0.45])


def test_detect_no_event_when_everything_is_fresh():
    node, w = make_node(2), Wire()
    node.tick(900.0, [w.heartbeat(1, 900.0), w.perf(1, 900.0, 0)])
    assert detect_switchover_event(node, 1, 1000.0) is None


def test_detect_token_release():
    node, w = make_node(2), Wire()
    rel = w(MessageKind.TOKEN_RELEASE, 1, 1, 100.0, {"plant_id": 1})
    assert detect_switchover_event(node, 1, 100.0, [rel]) is SwitchoverEvent.HARDWARE_FAILURE_TOKEN


def test_detect_missing_perf_vars():
    node, w = make_node(2), Wire()
    node.tick(500.0, [w.heartbeat(1, 500.0), w.perf(1, 500.0, 0)])
    for t in range(600, 1401, 100):
        node.tick(float(t), [w.heartbeat(1, float(t))])
    assert detect_switchover_event(node, 1, 2000.0) is SwitchoverEvent.NO_STATE_BROADCAST


def test_detect_priority_handoff_first():
    node, w = make_node(2), Wire()
    inbox = [w(MessageKind.TOKEN_RELEASE, 1, 1, 0.0, {"plant_id": 1}),
             w(MessageKind.RESOURCE_HANDOFF, 1, 1, 0.0, {"plant_id": 1, "load": 9})]
    assert detect_switchover_event(node, 1, 5000.0, inbox) is SwitchoverEvent.RESOURCE_EXHAUSTED


def test_claim_while_duty_is_a_violation():
    node = make_node(1, duty=(1,))
    with pytest.raises(ProtocolViolation):
        claim_token(node, 1, SwitchoverEvent.COMM_TIMEOUT, 10.0)


def test_single_standby_takes_over_after_claim_window():
    node = make_node(2)
    out, _ = node.tick(1000.0)
    assert kinds(out) == [MessageKind.TOKEN_CLAIM]
    assert node.tick(1149.0)[0] == [] and node.role is Role.STANDBY
    out, _ = node.tick(1150.0)
    assert node.role_for(1) is Role.DUTY and node.plants[1].epoch == 2
    assert MessageKind.HEARTBEAT in kinds(out)


def _race(a_id, a_t, b_id, b_t, latency=55.0):
    a, b = make_node(a_id, peers=(a_id, b_id)), make_node(b_id, peers=(a_id, b_id))
    _, ca = claim_token(a, 1, SwitchoverEvent.COMM_TIMEOUT, a_t)
    _, cb = claim_token(b, 1, SwitchoverEvent.COMM_TIMEOUT, b_t)
    b.tick(a_t + latency, [ca])
    a.tick(b_t + latency, [cb])
    end = max(a_t, b_t) + 1000
    a.tick(end)
    b.tick(end)
    return a, b


def test_earlier_claim_wins():
    a, b = _race(3, 5000.0, 4, 5055.0)
    assert a.role_for(1) is Role.DUTY and b.role_for(1) is Role.STANDBY
    assert b.plants[1].epoch == 2
    assert claim_winner([(5000.0, 3), (5055.0, 4)]) == 3


def test_tie_goes_to_lower_node_id():
    a, b = _race(7, 5000.0, 2, 5000.0)
    assert b.role_for(1) is Role.DUTY and a.role_for(1) is Role.STANDBY
    assert claim_winner([(5000.0, 7), (5000.0, 2)]) == 2


def test_restore_state_idempotent_and_stale_rejected():
    node = make_node(2)
    perf = PerfVars(1, [45, 45], [20, 20], [19.55, 19.55], [0.45, 0.45], [0.45, 0.45], [20, 20], 0.4, 10)
    restore_state(node, perf)
    before = node.plants[1].monitor.last_increments()
    restore_state(node, PerfVars.from_body(perf.to_body()))
    assert node.plants[1].replicated_state == perf
    np.testing.assert_array_equal(node.plants[1].monitor.last_increments()[0], before[0])
    np.testing.assert_allclose(before[0], perf.x_last - perf.x_prev)
    with pytest.raises(StaleStateError):
        restore_state(node, PerfVars(1, [45, 45], [20, 20], [20, 20], [0, 0], [0, 0], [20, 20], 0.0, 9))


def test_perf_vars_validation():
    with pytest.raises(ValueError):
        PerfVars(1, [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], 0.0, -1)


def test_takeover_mid_trajectory_settles():
    cfg = ScenarioConfig(faults=[FaultSpec(44.5, "KILL", 1)])
    log = run_scenario(cfg)
    at_kill = next(r for r in log.records if r["t"] == 44.0)
    assert at_kill["p1_y_az"] == pytest.approx(19.8, abs=0.5)
    assert log.summary["settling_time_s"] is not None
    assert log.summary["final_error_deg"] < 1.0
    assert log.records[-1]["p1_duty"] == 2


def test_assign_two_by_two():
    a = assign_plants([1, 2], [1, 2], 1)
    assert a.duty == {1: 1, 2: 2} and a.standby == {1: [2], 2: [1]}


def test_assign_single_controller_warns():
    with pytest.warns(RuntimeWarning):
        a = assign_plants([1], [1, 2, 3], 3)
    assert a.duty == {1: 1, 2: 1, 3: 1} and all(not s for s in a.standby.values())


def test_assign_round_robin():
    a = assign_plants([1, 2, 3], [1, 2, 3, 4], 2)
    assert a.duty == {1: 1, 2: 2, 3: 3, 4: 1}
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assign_plants([1, 2, 3], [1, 2, 3, 4], 2)


def test_assign_over_capacity():
    with pytest.raises(CapacityError):
        assign_plants([1, 2], [1, 2, 3], 1)


@pytest.mark.parametrize("n, a, expected", [(1, 0.9, 0.9), (4, 0.9, 0.9999), (2, 0.99, 0.9999)])
def test_availability(n, a, expected):
    assert availability(n, a) == pytest.approx(expected, abs=1e-15)


def test_gateway_epoch_rules():
    w = Wire()
    g = PlantGateway(1)
    ctrl = lambda s, e: w(MessageKind.CONTROL, s, e, 0.0, {"plant_id": 1, "u": [0, 0], "step": 0})
    assert g.admit(ctrl(1, 1))
    assert not g.admit(ctrl(2, 1))
    assert g.admit(ctrl(2, 2))
    assert not g.admit(ctrl(1, 1))
    assert g.rejected == 2 and g.owner == {1: 1, 2: 2}


def test_malformed_and_duplicate_messages():
    node, w = make_node(2), Wire()
    bad = w(MessageKind.HEARTBEAT, 1, 1, 100.0, {"plants": [1]})
    node.tick(100.0, [bad])
    assert node.malformed == 1
    hb = w.heartbeat(1, 200.0)
    node.tick(200.0, [hb])
    node.tick(900.0, [hb])  # replay with the same seq is ignored
    assert node.plants[1].last_seen_duty == 200.0


def test_failed_node_is_silent():
    node, w = make_node(1, duty=(1,)), Wire()
    node.kill(0.0)
    assert node_tick(node, 100.0, [w.sensor(1, 100.0, 0)])[1:] == ([], {})
    assert node.role is Role.FAILED


def _scenario(**faults_and_protocol):
    faults = faults_and_protocol.pop("faults", [])
    cfg = ScenarioConfig(faults=[FaultSpec(*f) for f in faults])
    for k, v in faults_and_protocol.items():
        setattr(cfg.protocol, k, v)
    return run_scenario(cfg)


def _claims(log):
    return [e for e in log.events if e["kind"] == "token_claim"]


def test_release_fault_triggers_token_claim():
    log = _scenario(faults=[(30, "RELEASE", 1)])
    claims = _claims(log)
    assert claims[0]["detail"] == "HARDWARE_FAILURE_TOKEN"
    assert claims[0]["t"] - 30000 < 200
    assert log.summary["safety_ok"]


def test_stall_fault_triggers_no_state_broadcast():
    log = _scenario(faults=[(30, "STALL", 1)])
    claims = _claims(log)
    assert claims[0]["detail"] == "NO_STATE_BROADCAST"
    assert log.summary["safety_ok"] and log.summary["final_error_deg"] < 1.0


def test_cpu_budget_triggers_handoff():
    log = _scenario(cpu_budget=0)
    kinds_ = [e["kind"] for e in log.events]
    assert "resource_handoff" in kinds_
    assert _claims(log)[0]["detail"] == "RESOURCE_EXHAUSTED"
    assert log.summary["safety_ok"] and log.summary["final_error_deg"] < 1.0


def test_recovered_node_rejoins_as_standby():
    log = _scenario(faults=[(40, "KILL", 1), (80, "RECOVER", 1)])
    after = [r["p1_duty"] for r in log.records if r["t"] > 82]
    assert set(after) == {2}
    assert log.records[-1]["p1_epoch"] == 2


def test_kill_standby_leaves_trace_unchanged():
    base = run_scenario(ScenarioConfig())
    killed = run_scenario(ScenarioConfig(faults=[FaultSpec(30, "KILL", 2)]))
    ys = lambda log: [(r["p1_y_az"], r["p1_y_el"]) for r in log.records]
    assert ys(base) == ys(killed)


def test_kill_everything_coasts_with_loss_flag():
    log = run_scenario(ScenarioConfig(faults=[FaultSpec(30, "KILL", 1), FaultSpec(30, "KILL", 2)]))
    late = [r for r in log.records if r["t"] >= 32]
    assert all(r["p1_loss_of_control"] for r in late)
    assert len({(r["p1_y_az"], r["p1_y_el"]) for r in late}) == 1


def test_epochs_never_decrease_on_control_trace():
    log = _scenario(faults=[(30, "KILL", 1), (60, "RECOVER", 1), (90, "KILL", 2), (130, "RECOVER", 2)])
    epochs = [r["p1_epoch"] for r in log.records]
    assert epochs == sorted(epochs) and epochs[-1] == 3


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.3), st.floats(0.0, 0.3),
       st.lists(st.tuples(st.integers(5, 55), st.sampled_from(["KILL", "PARTITION", "HEAL", "RECOVER", "STALL"]),
                          st.integers(1, 3)), max_size=4))
def test_safety_under_loss_duplicates_and_faults(seed, loss, dup, faults):
    cfg = ScenarioConfig(duration_s=60, rng_seed=seed, faults=[FaultSpec(*f) for f in faults])
    cfg.protocol.n_controllers = 3
    cfg.link.loss_prob = loss
    cfg.link.reliable = False
    cfg.link.dup_prob = dup
    log = run_scenario(cfg)
    assert log.summary["safety_ok"]
    for e in log.events:
        assert e["epoch"] >= 1
