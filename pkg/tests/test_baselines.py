"""Reference protocols: stop-restart, all-at-once, fluid, fetch-on-demand, unbound."""
import pytest

from conftest import small_config
from streamscale.bench.equivalence import equivalence_check
from streamscale.bench.scenario import reference_run, run_scenario
from streamscale.bench.scenarios import alternating_access, head_of_line
from streamscale.protocols import PROTOCOLS, make_protocol, protocol_class

EXACT = ["stop_restart", "all_at_once", "fluid", "fetch_on_demand", "drrs"]


def test_registry():
    assert set(PROTOCOLS) == set(EXACT) | {"unbound"}
    with pytest.raises(ValueError):
        protocol_class("megaphone")


@pytest.mark.parametrize("protocol", EXACT)
def test_exact_protocols_equivalent(protocol):
    cfg = small_config(wl_rate=1500.0)
    r = run_scenario(cfg, protocol)
    v = equivalence_check(r, reference_run(cfg))
    assert v.ok, v.diffs
    assert r.authoritative


@pytest.mark.parametrize("protocol", ["all_at_once", "fluid", "drrs"])
def test_each_keygroup_moves_once(protocol):
    r = run_scenario(small_config(), protocol)
    plan = r.coordinator.sessions[0].plan
    assert r.metrics.migrations_per_kg == {kg: 1 for kg, _, _ in plan.migrations}


def test_stop_restart_downtime_and_noop():
    cfg = small_config()
    r = run_scenario(cfg, "stop_restart")
    assert r.protocol_metrics["downtime"] > 0
    r2 = run_scenario(cfg.replace(new_parallelism=2), "stop_restart")
    assert r2.metrics.migrations == 0
    assert r2.final_state == reference_run(cfg).final_state


def test_fluid_scheduling_flag_stays_exact():
    cfg = small_config(wl_rate=1500.0)
    r = run_scenario(cfg, "fluid", scheduling=True)
    assert equivalence_check(r, reference_run(cfg)).ok


@pytest.mark.parametrize("protocol", ["fluid", "all_at_once"])
def test_no_migration_no_suspension(protocol):
    r = run_scenario(small_config(new_parallelism=2), protocol)
    assert r.metrics.L_s == 0 and not r.metrics.suspension_events


def test_head_record_for_last_keygroup():
    cfg, wl = head_of_line()
    ls = {p: run_scenario(cfg, p, workload=wl).metrics.L_s for p in ("fluid", "all_at_once")}
    assert ls["fluid"] > 0
    assert ls["all_at_once"] >= ls["fluid"] >= 0.9 * ls["all_at_once"]


def test_single_keygroup_fluid_equals_all_at_once():
    # 1 -> 2 instances over 2 key-groups moves exactly one key-group
    cfg = small_config(num_keygroups=2, parallelism=1, new_parallelism=2, wl_rate=600.0)
    runs = {p: run_scenario(cfg, p) for p in ("fluid", "all_at_once")}
    assert len(runs["fluid"].coordinator.sessions[0].plan.migrations) == 1
    assert runs["fluid"].metrics.L_s == runs["all_at_once"].metrics.L_s


def test_fetch_back_and_forth():
    cfg, wl = alternating_access()
    r = run_scenario(cfg, "fetch_on_demand", workload=wl)
    assert max(r.metrics.sub_migrations.values()) >= 2
    assert equivalence_check(r, reference_run(cfg, workload=wl)).ok


def test_fetch_from_new_owner_only_moves_once():
    cfg, wl = alternating_access(backlog=0)
    r = run_scenario(cfg, "fetch_on_demand", workload=wl)
    assert set(r.metrics.sub_migrations.values()) == {1}


def test_fetch_fanout_one_is_whole_keygroup():
    cfg, wl = alternating_access(backlog=0)
    r = run_scenario(cfg, "fetch_on_demand", workload=wl, fanout=1)
    assert all(name.endswith(".0") for name in r.metrics.sub_migrations)
    assert r.metrics.migrations_per_kg == {kg: 1 for kg in r.metrics.migrations_per_kg}


def test_fetch_rejects_zero_fanout():
    with pytest.raises(ValueError):
        run_scenario(small_config(), "fetch_on_demand", fanout=0)


def test_unbound_is_not_authoritative():
    cfg = small_config(wl_rate=1500.0)
    r = run_scenario(cfg, "unbound")
    assert not r.authoritative
    v = equivalence_check(r, reference_run(cfg))
    assert not v.authoritative and "non-authoritative" in v.summary()
    assert r.metrics.L_p == 0 and r.metrics.L_s == 0
    assert not r.trace.of_kind("suspend_begin")
