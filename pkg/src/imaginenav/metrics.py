"""Success rate, SPL, memory accounting and the paired ablation harness."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .imagine import DegradeParams
from .memory import MemoryConfig
from .navloop import Components, EpisodeConfig, EpisodeResult, run_episode
from .planner import Telemetry
from .where2imagine import DEFAULT_HORIZON, Regressor, TrainHyper, collect_demos, train_regressor
from .world import WorldParams, generate_world

log = logging.getLogger(__name__)

CSV_COLUMNS = ("config_id", "episodes", "SR", "SPL", "avg_mem", "remote_fallback_rate")
REPORT_FORMAT_VERSION = 1
GOAL_KINDS = {"objectnav": "category", "insinav": "instance", "category": "category", "instance": "instance"}


def _fields(r) -> tuple[int, float, float]:
    if isinstance(r, dict):
        return int(r["success"]), float(r["path_length"]), float(r["shortest_length"])
    return int(r.success), float(r.path_length), float(r.shortest_length)


def success_rate(results: Sequence) -> float:
    if not results:
        raise ValueError("success_rate needs at least one result")
    return math.fsum(_fields(r)[0] for r in results) / len(results)


def spl_term(success: int, path: float, shortest: float) -> float:
    """One episode's contribution; a zero-length optimum counts as ``success``."""
    if path < 0 or shortest < 0:
        raise ValueError("path lengths must be non-negative")
    if shortest == 0.0:
        return float(success)
    return success * shortest / max(path, shortest)


def spl(results: Sequence) -> float:
    if not results:
        raise ValueError("spl needs at least one result")
    return math.fsum(spl_term(*_fields(r)) for r in results) / len(results)


def avg_memory_size(traces: Iterable) -> float:
    """Mean keyframe count at episode end over traces or episode results."""
    sizes = []
    for t in traces:
        if isinstance(t, EpisodeResult):
            sizes.append(t.final_memory_size)
            continue
        final = [r for r in t if r.get("type") == "result"]
        if not final:
            raise ValueError("trace has no result record")
        sizes.append(final[-1]["memory_size"])
    return math.fsum(sizes) / len(sizes) if sizes else 0.0


# ---------------------------------------------------------------------------
# ablation configs


@dataclass(frozen=True)
class AblationConfig:
    config_id: str
    components: Components
    goal_kind: str = "objectnav"
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        if self.goal_kind not in GOAL_KINDS:
            raise ValueError(f"unknown goal kind {self.goal_kind!r}")

    def to_dict(self) -> dict:
        return {"config_id": self.config_id, "components": self.components.to_dict(),
                "goal_kind": self.goal_kind, "horizon": self.horizon}


_OFF = MemoryConfig(mode="off")


def _noimag(**kw) -> Components:
    return Components(imagination=False, where2imagine=False, imagine_mode=None, **kw)


def table2_matrix() -> list[AblationConfig]:
    """The seven imagination/memory ablation rows."""
    return [
        AblationConfig("base", _noimag(memory=_OFF)),
        AblationConfig("base+memory", _noimag()),
        AblationConfig("fixed", Components(where2imagine=False, memory=_OFF)),
        AblationConfig("fixed+memory", Components(where2imagine=False)),
        AblationConfig("where2imagine", Components(memory=_OFF)),
        AblationConfig("full", Components()),
        AblationConfig("full-degraded", Components(imagine_mode="degraded")),
    ]


def memory_matrix() -> list[AblationConfig]:
    return [
        AblationConfig("memory-off", Components(memory=_OFF)),
        AblationConfig("memory-full", Components(memory=MemoryConfig(mode="full"))),
        AblationConfig("memory-uniform", Components(memory=MemoryConfig(mode="uniform"))),
        AblationConfig("memory-selective", Components()),
    ]


def t_sweep_matrix(horizons: Iterable[int] = range(8, 16)) -> list[AblationConfig]:
    return [AblationConfig(f"T={t}", Components(), horizon=t) for t in horizons]


def sanity_matrix() -> list[AblationConfig]:
    """Cheating planner, full system, no-imagination baseline and random planner."""
    return [
        AblationConfig("oracle-planner", Components(planner="oracle")),
        AblationConfig("full", Components()),
        AblationConfig("no-imagination", _noimag(memory=_OFF)),
        AblationConfig("random", Components(planner="random")),
    ]


def degrade_matrix() -> list[AblationConfig]:
    return [
        AblationConfig("oracle-imagination", Components()),
        AblationConfig("degraded", Components(imagine_mode="degraded", degrade=DegradeParams())),
    ]


PRESETS: dict[str, Callable[[], list[AblationConfig]]] = {
    "table2": table2_matrix,
    "memory": memory_matrix,
    "tsweep": t_sweep_matrix,
    "sanity": sanity_matrix,
    "degrade": degrade_matrix,
}


# ---------------------------------------------------------------------------
# reports


@dataclass
class RunReport:
    config_id: str
    rows: list[dict]
    sr: float
    spl: float
    avg_mem: float
    fingerprint: dict
    telemetry: Telemetry = field(default_factory=Telemetry)
    complete: bool = True

    @property
    def episodes(self) -> int:
        return len(self.rows)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.fingerprint, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def csv_row(self) -> list[str]:
        return [self.config_id, str(self.episodes), f"{self.sr:.6f}", f"{self.spl:.6f}",
                f"{self.avg_mem:.6f}", f"{self.telemetry.fallback_rate:.6f}"]

    def to_json(self) -> str:
        doc = {
            "version": REPORT_FORMAT_VERSION,
            "config_id": self.config_id,
            "complete": self.complete,
            "fingerprint": self.fingerprint,
            "fingerprint_sha256": self.digest,
            "episodes": self.episodes,
            "SR": self.sr,
            "SPL": self.spl,
            "avg_mem": self.avg_mem,
            "telemetry": self.telemetry.to_dict(),
            "rows": self.rows,
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def make_report(config_id: str, results: Sequence[EpisodeResult], fingerprint: dict,
                complete: bool = True) -> RunReport:
    tel = Telemetry()
    rows = []
    for r in results:
        tel.merge(r.telemetry)
        rows.append({"seed": r.seed, "world_seed": r.trace[0].get("world_seed") if r.trace else None,
                     "success": r.success, "path_length": r.path_length,
                     "shortest_length": r.shortest_length, "steps": r.steps,
                     "memory_size": r.final_memory_size, "cycles": r.cycles,
                     "spl": spl_term(r.success, r.path_length, r.shortest_length)})
    if results:
        sr_, spl_, mem = success_rate(results), spl(results), avg_memory_size(results)
    else:
        sr_ = spl_ = mem = 0.0
    return RunReport(config_id, rows, sr_, spl_, mem, fingerprint, tel, complete)


def reports_csv(reports: Sequence[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def write_reports(reports: Sequence[RunReport], out_dir, name: str = "report") -> list[Path]:
    """``<name>.csv`` plus one ``<name>_<config_id>.json`` per report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{name}.csv"]
    paths[0].write_text(reports_csv(reports))
    for r in reports:
        p = out / f"{name}_{_safe(r.config_id)}.json"
        p.write_text(r.to_json())
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# harness


def episode_seeds(seed: int, n: int) -> list[tuple[int, int]]:
    """(world seed, episode seed) pairs shared by every config of a run."""
    out = []
    for i in range(n):
        a, b = np.random.SeedSequence([seed, 7, i]).generate_state(2)
        out.append((int(a), int(b)))
    return out


def train_worlds_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence([seed, 11]).generate_state(n)]


def train_where2imagine(world_params: WorldParams, horizon: int, seed: int, n_worlds: int = 20,
                        n_per_world: int = 100, hyper: TrainHyper | None = None) -> Regressor:
    """Collect oracle demos on dedicated training worlds and fit the regressor."""
    worlds = [generate_world(s, world_params) for s in train_worlds_seeds(seed, n_worlds)]
    demos = collect_demos(worlds, horizon, n_per_world, seed=seed)
    model, _ = train_regressor(demos, hyper or TrainHyper(), seed=seed)
    return model


def _run_one(args) -> EpisodeResult:
    world_params, world_seed, components, ep_cfg, ep_seed, regressor, remote_factory = args
    world = generate_world(world_seed, world_params)
    return run_episode(world, components, ep_cfg, seed=ep_seed, regressor=regressor,
                       remote_factory=remote_factory)


def run_ablation(matrix: Sequence[AblationConfig], episodes: int, seed: int,
                 world_params: WorldParams | None = None, episode_config: EpisodeConfig | None = None,
                 regressors: dict[int, Regressor] | None = None, workers: int = 1,
                 remote_factory=None, train_hyper: TrainHyper | None = None) -> list[RunReport]:
    """One report per config over identical (world, episode) seeds.

    Regressors are trained once per horizon unless supplied.  An interrupt
    stops the run and returns the finished prefix with ``complete=False``.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    base_params = world_params or WorldParams()
    ep_cfg = episode_config or EpisodeConfig()
    for cfg in matrix:
        cfg.components.validate(check_regressor=False)
    regressors = dict(regressors or {})
    pairs = episode_seeds(seed, episodes)
    reports: list[RunReport] = []
    for cfg in matrix:
        params = replace(base_params, goal_kind=GOAL_KINDS[cfg.goal_kind])
        reg = None
        if cfg.components.where2imagine:
            if cfg.horizon not in regressors:
                log.info("training where2imagine for T=%d", cfg.horizon)
                regressors[cfg.horizon] = train_where2imagine(params, cfg.horizon, seed, hyper=train_hyper)
            reg = regressors[cfg.horizon]
        fp = {"config": cfg.to_dict(), "world_params": asdict(params), "episode_config": asdict(ep_cfg),
              "seed": seed, "episodes": episodes}
        jobs = [(params, ws, cfg.components, ep_cfg, es, reg, remote_factory) for ws, es in pairs]
        results: list[EpisodeResult] = []
        complete = True
        try:
            if workers > 1:
                remote = cfg.components.planner == "remote"
                pool_cls = ThreadPoolExecutor if remote or remote_factory else ProcessPoolExecutor
                with pool_cls(max_workers=workers) as pool:
                    for r in pool.map(_run_one, jobs):
                        results.append(r)
            else:
                for job in jobs:
                    results.append(_run_one(job))
        except KeyboardInterrupt:
            complete = False
        reports.append(make_report(cfg.config_id, results, fp, complete))
        if not complete:
            break
    return reports
