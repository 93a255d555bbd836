"""Aligned checkpoints, snapshots taken while scaling, and restore."""
import json

import pytest

from conftest import small_config
from streamscale.bench.scenario import prepare, reference_run, run_scenario, workload_for
from streamscale.bench.scenarios import checkpoint_during_scaling
from streamscale.bench.workload import records_from
from streamscale.errors import DuplicateCheckpoint
from streamscale.runtime.checkpoint import restore, run_checkpoint
from streamscale.runtime.engine import Simulation
from streamscale.runtime.graph import three_operator_job
from streamscale.state import load_state_lines


def _idle_sim():
    wl = records_from([(0, b"a", 1), (1, b"a", 2), (2, b"b", 5)])
    sim = Simulation(three_operator_job(parallelism=2, num_keygroups=8), wl)
    sim.run()
    return sim


def test_idle_checkpoint_captures_sums(tmp_path):
    sim = _idle_sim()
    snap = run_checkpoint(sim, 1)
    assert snap.flat_state("agg") == {b"a": (3, 2), b"b": (5, 1)}
    path = tmp_path / "agg.jsonl"
    snap.dump(path, "agg")
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert {"kg", "key", "value"} == set(rows[0])
    nonempty = {kg: e for kg, e in snap.keyed_state["agg"].items() if e}
    assert load_state_lines(path.read_text().splitlines()) == nonempty


def test_duplicate_checkpoint_id():
    sim = _idle_sim()
    run_checkpoint(sim, 1)
    with pytest.raises(DuplicateCheckpoint):
        run_checkpoint(sim, 1)


def test_restore_without_scaling_replays_to_same_state():
    cfg = small_config(checkpoints=[(1, 1500)])
    r = run_scenario(cfg, scale=False)
    snap = r.sim.checkpoints.snapshot(1)
    sim2 = restore(snap, cfg.build_job(), workload_for(cfg.workload))
    sim2.run()
    assert sim2.final_state("agg") == r.final_state


def test_snapshot_during_drrs_records_progress():
    cfg = small_config(wl_rate=2000.0, scale_at=1995, checkpoints=[(1, 2000)])
    r = run_scenario(cfg, "drrs")
    snap = r.sim.checkpoints.snapshot(1)
    scaling = snap.scaling_state()
    assert scaling
    rows = [row for v in scaling.values() for row in v["subscales"]]
    assert all({"phase", "keygroups", "emitted", "in_transit", "epochs"} <= set(row) for row in rows)
    assert any(row["emitted"] or row["in_transit"] or row["phase"] != "Completed" for row in rows)
    sim2 = restore(snap, cfg.build_job(), workload_for(cfg.workload))
    sim2.run()
    assert sim2.final_state("agg") == reference_run(cfg).final_state


@pytest.mark.parametrize("case", ["a", "b"])
def test_checkpoint_cases_restore(case):
    cfg = checkpoint_during_scaling(case)
    r = run_scenario(cfg, "drrs")
    snap = r.sim.checkpoints.snapshot(1)
    sim2 = restore(snap, cfg.build_job(), workload_for(cfg.workload))
    sim2.run()
    assert sim2.final_state("agg") == reference_run(cfg).final_state == r.final_state


def test_checkpoint_deferred_for_protocols_that_block():
    cfg = small_config(scale_at=1990, checkpoints=[(1, 2000)])
    r = run_scenario(cfg, "all_at_once")
    deferred = r.trace.of_kind("checkpoint_deferred")
    assert deferred
    inject = r.trace.of_kind("checkpoint_inject")[0]
    assert inject.tick >= r.coordinator.sessions[0].ended_at
