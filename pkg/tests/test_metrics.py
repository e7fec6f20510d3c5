import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from imaginenav.memory import MemoryConfig
from imaginenav.metrics import (
    CSV_COLUMNS,
    AblationConfig,
    avg_memory_size,
    degrade_matrix,
    episode_seeds,
    memory_matrix,
    run_ablation,
    sanity_matrix,
    spl,
    spl_term,
    success_rate,
    t_sweep_matrix,
    table2_matrix,
    write_reports,
)
from imaginenav.navloop import ComponentConfigError, Components, EpisodeConfig
from imaginenav.world import WorldParams

SMALL = WorldParams(width=24, height=24, rooms=2)
FAST = EpisodeConfig(max_steps=120)


def ep(s, p, l):
    return {"success": s, "path_length": p, "shortest_length": l}


def test_success_rate():
    assert success_rate([ep(1, 1, 1)] * 3) == 1.0
    assert success_rate([ep(s, 1, 1) for s in (1, 0, 1, 0)]) == 0.5
    assert success_rate([ep(0, 1, 1)]) == 0.0
    with pytest.raises(ValueError):
        success_rate([])


def test_spl_fixtures():
    assert spl([ep(1, 3.0, 3.0)]) == pytest.approx(1.0, abs=1e-9)
    assert spl([ep(0, 3.0, 3.0)]) == 0.0
    assert spl([ep(1, 5.0, 4.0), ep(0, 2.0, 1.0)]) == pytest.approx(0.4, abs=1e-9)
    assert spl_term(1, 0.0, 0.0) == 1.0 and spl_term(0, 2.0, 0.0) == 0.0
    assert spl_term(1, 2.0, 4.0) == 1.0
    with pytest.raises(ValueError):
        spl([])
    with pytest.raises(ValueError):
        spl([ep(1, -1.0, 1.0)])


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30))
def test_spl_bounded_by_sr(rows):
    res = [ep(*r) for r in rows]
    for s, p, l in rows:
        assert 0.0 <= spl_term(s, p, l) <= s
    assert 0.0 <= spl(res) <= success_rate(res) + 1e-12 <= 1.0 + 1e-12


def test_avg_memory_size_from_traces():
    traces = [[{"type": "episode"}, {"type": "result", "memory_size": m}] for m in (4, 6)]
    assert avg_memory_size(traces) == 5.0
    assert avg_memory_size([]) == 0.0
    with pytest.raises(ValueError):
        avg_memory_size([[{"type": "episode"}]])


def test_matrices():
    t2 = table2_matrix()
    assert len(t2) == 7 and len({c.config_id for c in t2}) == 7
    assert [c.components.memory.mode for c in memory_matrix()] == ["off", "full", "uniform", "selective"]
    assert [c.horizon for c in t_sweep_matrix()] == list(range(8, 16))
    for c in t2 + memory_matrix() + sanity_matrix() + degrade_matrix():
        c.components.validate(check_regressor=False)
    with pytest.raises(ValueError):
        AblationConfig("x", Components(), goal_kind="pointnav")


def test_episode_seeds_are_stable():
    assert episode_seeds(3, 5) == episode_seeds(3, 5)
    assert episode_seeds(3, 5)[:2] == episode_seeds(3, 2)
    assert episode_seeds(3, 5) != episode_seeds(4, 5)


def test_invalid_combination_rejected():
    bad = AblationConfig("bad", Components(imagination=False, where2imagine=False, imagine_mode="oracle"))
    with pytest.raises(ComponentConfigError):
        run_ablation([bad], 1, 0)


@pytest.fixture(scope="module")
def mem_reports(regressor):
    return run_ablation(memory_matrix(), 6, seed=1, world_params=SMALL, episode_config=FAST,
                        regressors={11: regressor})


def test_memory_grid_reports(mem_reports):
    assert [r.config_id for r in mem_reports] == ["memory-off", "memory-full", "memory-uniform",
                                                  "memory-selective"]
    off, full, uni, sel = mem_reports
    assert off.avg_mem == 0.0
    frames = [r["memory_size"] for r in full.rows]
    assert full.avg_mem == pytest.approx(sum(frames) / len(frames))
    # full memory keeps one frame per executed step plus the initial view
    for row in full.rows:
        assert row["memory_size"] == row["steps"] + 1 - row["success"]
    for r in mem_reports:
        assert 0 <= r.spl <= r.sr <= 1
        assert [row["world_seed"] for row in r.rows] == [row["world_seed"] for row in off.rows]


def test_reports_written(tmp_path, mem_reports):
    paths = write_reports(mem_reports, tmp_path, "mem")
    text = (tmp_path / "mem.csv").read_text()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 5
    doc = json.loads((tmp_path / "mem_memory-selective.json").read_text())
    assert doc["fingerprint"]["config"]["components"]["memory"]["tau_m"] == 0.73
    assert len(doc["rows"]) == 6 and doc["complete"] is True
    assert len(paths) == 5


def test_reports_are_reproducible(regressor, mem_reports):
    again = run_ablation(memory_matrix(), 6, seed=1, world_params=SMALL, episode_config=FAST,
                         regressors={11: regressor})
    assert [r.csv_row() for r in again] == [r.csv_row() for r in mem_reports]
    assert [r.to_json() for r in again] == [r.to_json() for r in mem_reports]


def test_parallel_matches_serial(regressor, mem_reports):
    par = run_ablation(memory_matrix()[2:], 6, seed=1, world_params=SMALL, episode_config=FAST,
                       regressors={11: regressor}, workers=2)
    assert [r.to_json() for r in par] == [r.to_json() for r in mem_reports[2:]]


def test_interrupt_marks_incomplete(monkeypatch, regressor):
    import imaginenav.metrics as m

    calls = {"n": 0}
    real = m._run_one

    def flaky(args):
        calls["n"] += 1
        if calls["n"] == 3:
            raise KeyboardInterrupt
        return real(args)

    monkeypatch.setattr(m, "_run_one", flaky)
    reps = run_ablation(memory_matrix(), 4, seed=0, world_params=SMALL, episode_config=FAST,
                        regressors={11: regressor})
    assert len(reps) == 1 and not reps[0].complete and reps[0].episodes == 2


def test_sweep_trains_per_horizon(monkeypatch):
    import imaginenav.metrics as m

    seen = []
    real = m.train_where2imagine

    def spy(params, horizon, seed, **kw):
        seen.append(horizon)
        return real(params, horizon, seed, n_worlds=3, n_per_world=120, hyper=kw.get("hyper"))

    monkeypatch.setattr(m, "train_where2imagine", spy)
    reps = run_ablation(t_sweep_matrix(range(8, 10)), 1, seed=0, world_params=SMALL, episode_config=FAST)
    assert seen == [8, 9] and [r.config_id for r in reps] == ["T=8", "T=9"]
