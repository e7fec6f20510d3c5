"""Command-line entry point.

Every subcommand reads an optional ``--config`` file plus repeated
``--set key=value`` overrides.  Data paths resolve against the output
directory, logs go to stderr and failures print one ``error: ...`` line.
Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or config
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .memory import build_memory, history_from_features, memory_summary
from .metrics import PRESETS, AblationConfig, run_ablation, train_worlds_seeds, write_reports
from .navloop import Components, EpisodeConfig, run_episode
from .percept import read_embeddings
from .where2imagine import Regressor, collect_demos, load_demos, save_demos, train_regressor
from .world import GridWorld, WorldParams, generate_world

log = logging.getLogger("imaginenav")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(" ".join(message.split()))


def _one_line(exc: BaseException) -> str:
    text = " ".join(str(exc).split()) or type(exc).__name__
    return f"{type(exc).__name__}: {text}"


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(out: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else out / p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _load_world(path: Path) -> GridWorld:
    return GridWorld.from_json(path.read_text())


def _load_checkpoint(path: Path) -> tuple[Regressor, int | None]:
    text = path.read_text()
    horizon = json.loads(text).get("horizon")
    return Regressor.from_json(text), horizon


def _regressor_for(cfg: RunConfig, out: Path, components: Components, arg: str | None):
    """Checkpoint named on the command line or in the config, if needed."""
    if not components.where2imagine:
        return None, None
    ref = arg or cfg["checkpoint"]
    if ref is None:
        raise ConfigError("where2imagine is on but no checkpoint was given (--checkpoint or checkpoint =)")
    path = _resolve(out, ref)
    model, _ = _load_checkpoint(path)
    return model, path


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_worlds(args, cfg: RunConfig, out: Path) -> int:
    params = cfg.world_params()
    target = _resolve(out, args.dir)
    target.mkdir(parents=True, exist_ok=True)
    base = cfg["world.seed"]
    for i in range(cfg["worlds.count"]):
        seed = base + i
        (target / f"world_{seed}.json").write_text(generate_world(seed, params).to_json() + "\n")
    log.info("wrote %d worlds to %s", cfg["worlds.count"], target)
    return EXIT_OK


def _demo_worlds(args, cfg: RunConfig, out: Path) -> list[GridWorld]:
    if args.worlds:
        src = _resolve(out, args.worlds)
        files = sorted(src.glob("*.json")) if src.is_dir() else [src]
        if not files:
            raise FileNotFoundError(f"no world files under {src}")
        return [_load_world(f) for f in files]
    params = cfg.world_params()
    return [generate_world(s, params) for s in train_worlds_seeds(cfg["seed"], cfg["demos.worlds"])]


def cmd_collect_demos(args, cfg: RunConfig, out: Path) -> int:
    horizon = args.T or cfg["horizon"]
    worlds = _demo_worlds(args, cfg, out)
    demos = collect_demos(worlds, horizon, cfg["demos.per_world"], seed=cfg["seed"])
    path = _resolve(out, args.demos)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_demos(path, demos)
    log.info("wrote %d demos to %s (skipped worlds %d, dropped %s)", len(demos), path,
             demos.skipped_worlds, demos.dropped)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    horizon = args.T or cfg["horizon"]
    demos = load_demos(_resolve(out, args.demos))
    model, curve = train_regressor(demos, cfg.train_hyper(), seed=cfg["seed"])
    ckpt = json.loads(model.to_json())
    ckpt["horizon"] = horizon
    ckpt_path = _resolve(out, args.checkpoint)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_path.write_text(json.dumps(ckpt, sort_keys=True) + "\n")
    curve_path = _resolve(out, args.loss_curve)
    curve_path.write_text("epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)))
    log.info("trained on %d demos: loss %.4f -> %.4f", len(demos), curve[0], curve[-1])
    return EXIT_OK


def cmd_run_episode(args, cfg: RunConfig, out: Path) -> int:
    components = cfg.components()
    ep_cfg = cfg.episode_config()
    if args.world:
        wpath = _resolve(out, args.world)
        world = _load_world(wpath)
        world_meta = {"file": args.world, "sha256": _sha256(wpath)}
    else:
        params = cfg.world_params()
        world = generate_world(cfg["world.seed"], params)
        world_meta = {"seed": cfg["world.seed"], "params": asdict(params)}
    model, ckpt_path = _regressor_for(cfg, out, components, args.checkpoint)
    ckpt_ref = args.checkpoint or cfg["checkpoint"]
    meta = {"world": world_meta,
            "checkpoint": None if ckpt_path is None else {"file": ckpt_ref, "sha256": _sha256(ckpt_path)}}
    seed = cfg["seed"] if args.seed is None else args.seed
    result = run_episode(world, components, ep_cfg, seed=seed, regressor=model, meta=meta)
    path = _resolve(out, args.trace)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.trace_jsonl())
    log.info("episode seed %d: success=%d steps=%d spl-path %.2f/%.2f", seed, result.success,
             result.steps, result.path_length, result.shortest_length)
    return EXIT_OK


def _check_file(out: Path, ref: dict, what: str) -> Path:
    path = _resolve(out, ref["file"])
    if _sha256(path) != ref["sha256"]:
        raise RuntimeError(f"{what} {path} changed since the trace was recorded")
    return path


def cmd_replay(args, cfg: RunConfig, out: Path) -> int:
    path = _resolve(out, args.trace)
    text = path.read_text()
    header = json.loads(text.splitlines()[0])
    meta = header.get("meta")
    if header.get("type") != "episode" or meta is None:
        raise ValueError(f"{path} has no replayable episode header")
    wm = meta["world"]
    if "file" in wm:
        world = _load_world(_check_file(out, wm, "world"))
    else:
        world = generate_world(wm["seed"], WorldParams(**wm["params"]))
    model = None
    if meta.get("checkpoint"):
        model, _ = _load_checkpoint(_check_file(out, meta["checkpoint"], "checkpoint"))
    components = Components.from_dict(header["components"], endpoint=cfg.endpoint())
    ep_cfg = EpisodeConfig(**header["config"])
    result = run_episode(world, components, ep_cfg, seed=header["seed"], regressor=model, meta=meta)
    fresh = result.trace_jsonl()
    if fresh != text:
        old, new = text.splitlines(), fresh.splitlines()
        line = next((i for i, (a, b) in enumerate(zip(old, new), 1) if a != b), min(len(old), len(new)) + 1)
        print(f"error: replay mismatch: first difference at line {line}", file=sys.stderr)
        return EXIT_FAIL
    log.info("replay of %s matches (%d records)", path, len(result.trace))
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig, out: Path) -> int:
    preset = cfg["ablation.preset"]
    horizon = cfg["horizon"]
    if preset is not None:
        matrix = PRESETS[preset]()
        if preset != "tsweep":
            matrix = [replace(c, goal_kind=cfg["components.goal_kind"], horizon=horizon) for c in matrix]
    else:
        matrix = [AblationConfig("custom", cfg.components(), cfg["components.goal_kind"], horizon)]
    endpoint = cfg.endpoint()
    if endpoint is not None:
        matrix = [replace(c, components=replace(c.components, endpoint=endpoint)) for c in matrix]
    for c in matrix:
        c.components.validate(check_regressor=False)
    regressors = {}
    if cfg["checkpoint"] is not None:
        model, h = _load_checkpoint(_resolve(out, cfg["checkpoint"]))
        regressors[h or horizon] = model
    reports = run_ablation(matrix, cfg["episodes"], cfg["seed"], world_params=cfg.world_params(),
                           episode_config=cfg.episode_config(), regressors=regressors,
                           workers=cfg["workers"], train_hyper=cfg.train_hyper())
    (out / f"{args.name}.cfg").write_text(cfg.dumps())
    paths = write_reports(reports, out, args.name)
    for r in reports:
        log.info("%s: SR %.3f SPL %.3f mem %.1f%s", r.config_id, r.sr, r.spl, r.avg_mem,
                 "" if r.complete else " (incomplete)")
    log.info("wrote %s", ", ".join(str(p) for p in paths))
    if not all(r.complete for r in reports) or len(reports) < len(matrix):
        print("error: interrupted: partial reports written", file=sys.stderr)
        return 130
    return EXIT_OK


def cmd_mem_inspect(args, cfg: RunConfig, out: Path) -> int:
    records = list(read_embeddings(_resolve(out, args.embeddings)))
    history = history_from_features([r[2] for r in records], [r[0] for r in records])
    summary = memory_summary(build_memory(history, cfg.memory()))
    _write_json(_resolve(out, args.output), summary)
    log.info("memory: %d keyframes from %d frames", summary["total"], len(records))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--out", help="output directory (overrides the out key)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="imaginenav", description="Imagination-driven object navigation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-worlds", parents=[common], help="generate world JSON files")
    p.add_argument("--dir", default="worlds")
    p.set_defaults(func=cmd_gen_worlds)

    p = sub.add_parser("collect-demos", parents=[common], help="collect oracle demonstrations")
    p.add_argument("--worlds", help="world file or directory; generated from the config if omitted")
    p.add_argument("--demos", default="demos.jsonl")
    p.add_argument("--T", type=int)
    p.set_defaults(func=cmd_collect_demos)

    p = sub.add_parser("train", parents=[common], help="fit the waypoint regressor")
    p.add_argument("--demos", required=True)
    p.add_argument("--T", type=int)
    p.add_argument("--checkpoint", default="checkpoint.json")
    p.add_argument("--loss-curve", default="loss_curve.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run-episode", parents=[common], help="run one episode and write its trace")
    p.add_argument("--world", help="world JSON; generated from world.seed if omitted")
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", default="trace.jsonl")
    p.set_defaults(func=cmd_run_episode)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation matrix")
    p.add_argument("--name", default="report")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("mem-inspect", parents=[common], help="summarise memory over an embedding dump")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", default="memory.json")
    p.set_defaults(func=cmd_mem_inspect)

    p = sub.add_parser("replay", parents=[common], help="re-run a trace and compare")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.set)
    except (UsageError, ConfigError) as exc:
        print(f"error: usage: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = _out_dir(args, cfg)
        return args.func(args, cfg, out)
    except ConfigError as exc:
        print(f"error: usage: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - the CLI contract is one line, never a traceback
        log.debug("failure", exc_info=True)
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
