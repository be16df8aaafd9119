"""Command-line entry point: ``hdaland <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines
from .config import SEED_ENV_VAR, ConfigError, digest, dumps, flat_defaults, load_config
from .env import LandingEnv, pooled_latent
from .gridio import ensure_dir, heights_to_pgm16, mask_to_pgm8, write_pgm
from .library import TerrainLibrary
from .neural import AutoencoderModel, DenseNet, train_autoencoder
from .render import fov_box, render_frame
from .td3 import train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
POLICIES = ("agent", "fixed", "single", "random")
DIFFICULTY_ALIASES = {"hard": "hard-eval", "hard-eval": "hard-eval", "random": "training-random",
                      "training": "training-random", "training-random": "training-random"}


class UsageError(Exception):
    pass


class MissingArtifactError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_help():
    lines = ["configuration keys (JSON document passed with --config; defaults shown):"]
    for key, value in flat_defaults():
        lines.append(f"  {key} = {json.dumps(value)}")
    lines.append(f"environment: {SEED_ENV_VAR} overrides 'seed'")
    return "\n".join(lines)


# -- helpers ------------------------------------------------------------------

def _library(cfg, limit=None):
    path = Path(cfg.paths.terrain_dir)
    if not (path / "manifest.json").exists():
        raise MissingArtifactError(f"terrain library not found at {path}; run 'hdaland gen-terrain' first")
    return TerrainLibrary.load(path, limit)


def _encoder(cfg, required):
    if cfg.encoder == "pooled":
        return pooled_latent
    path = Path(cfg.paths.autoencoder)
    if path.exists():
        return AutoencoderModel.load(path)
    if required:
        raise MissingArtifactError(f"autoencoder checkpoint not found at {path}; run 'hdaland train-autoencoder' "
                                   "or pass --train-autoencoder")
    return pooled_latent


def _actor(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"actor checkpoint not found at {path}; run 'hdaland train' first")
    return DenseNet.load(path)


def _difficulty(name):
    if name not in DIFFICULTY_ALIASES:
        raise UsageError(f"unknown difficulty {name!r}; choose from {sorted(DIFFICULTY_ALIASES)}")
    return DIFFICULTY_ALIASES[name]


def _make_policy(cfg, args):
    name = args.policy
    if name not in POLICIES:
        raise UsageError(f"unknown policy {name!r}; choose from {POLICIES}")
    actor_path = args.actor or str(Path(cfg.paths.checkpoint_dir) / "actor.json")
    if name == "agent":
        return baselines.ActorPolicy(_actor(actor_path)), True
    if name == "fixed":
        if args.zero_shift:
            return baselines.FixedControlPolicy(None), False
        return baselines.FixedControlPolicy(_actor(actor_path)), True
    if name == "single":
        return baselines.SingleDivertPolicy(), False
    return baselines.RandomPolicy(), False


# -- commands -----------------------------------------------------------------

def cmd_gen_terrain(cfg, args):
    count = args.count
    if count < 1:
        raise UsageError("--count must be at least 1")
    out = Path(args.out or cfg.paths.terrain_dir)
    seeds = [int(s) for s in np.random.SeedSequence([cfg.seed, 11]).generate_state(count)]
    lib = TerrainLibrary.generate(cfg.terrain, seeds, cfg.geometry, cfg.thresholds)
    n_train = count - args.holdout
    extra = {"config_digest": digest(cfg), "seed": cfg.seed,
             "splits": {"training": [e.name for e in lib.entries[:n_train]],
                        "variation": [e.name for e in lib.entries[n_train:]]}}
    manifest = lib.save(out, extra)
    if args.pgm:
        for e in lib.entries:
            heights_to_pgm16(out / f"{e.name}.pgm", e.dem.heights)
            mask_to_pgm8(out / f"{e.name}_vd.pgm", e.maps.v_d)
    for e in lib.entries:
        print(f"{e.name}: seed {e.seed}, hazard fraction {e.maps.hazard_fraction():.3f}")
    print(f"wrote {len(lib)} terrains to {manifest}")
    return EXIT_OK


def _train_autoencoder(cfg, rollouts, library):
    env = LandingEnv(cfg.env_config(difficulty="training-random"), library)
    maps = baselines.collect_maps(env, rollouts, cfg.seed)
    model, history = train_autoencoder(maps, cfg.autoencoder)
    path = Path(cfg.paths.autoencoder)
    ensure_dir(path.parent)
    model.save(path, meta={"config_digest": digest(cfg), "rollouts": rollouts, "maps": len(maps)})
    hist_path = path.with_suffix(".history.csv")
    with open(hist_path, "w") as fh:
        fh.write("epoch,train_mse,val_mse,config_digest\n")
        for k, (tr, va) in enumerate(zip(history["train"], history["val"]), 1):
            fh.write(f"{k},{tr!r},{va!r},{digest(cfg)}\n")
    print(f"autoencoder: {len(maps)} maps from {rollouts} rollouts, final held-out MSE {history['val'][-1]:.5f}")
    print(f"wrote {path} and {hist_path}")
    return model


def cmd_train_autoencoder(cfg, args):
    rollouts = cfg.autoencoder_rollouts if args.rollouts is None else args.rollouts
    if rollouts < 1:
        raise UsageError("--rollouts must be at least 1")
    _train_autoencoder(cfg, rollouts, _library(cfg, args.terrains))
    return EXIT_OK


def cmd_train(cfg, args):
    library = _library(cfg, args.terrains)
    if args.train_autoencoder:
        _train_autoencoder(cfg, cfg.autoencoder_rollouts, library)
    encoder = _encoder(cfg, required=True)
    td3_cfg = cfg.td3
    if args.updates is not None:
        td3_cfg = dataclasses.replace(td3_cfg, total_updates=args.updates)
    if td3_cfg.checkpoint_every == 0:
        td3_cfg = dataclasses.replace(td3_cfg, checkpoint_every=max(td3_cfg.total_updates // 10, 1))
    env_cfg = cfg.env_config()
    out = ensure_dir(cfg.paths.out_dir)
    agent, rows = train(lambda: LandingEnv(env_cfg, library, encoder), td3_cfg, cfg.seed,
                        log_path=out / "train_log.csv", checkpoint_dir=cfg.paths.checkpoint_dir,
                        digest=digest(cfg), resume=args.resume, stop_after_updates=args.stop_after)
    st = agent.train_state
    print(f"updates {agent.updates}, env steps {st.env_steps}, episodes {st.episodes}")
    if rows:
        print(f"last window: mean reward {rows[-1][5]:.4f}, safe-landing ratio {rows[-1][6]:.3f}")
    print(f"log: {out / 'train_log.csv'}; checkpoint: {cfg.paths.checkpoint_dir}")
    return EXIT_OK


def cmd_evaluate(cfg, args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    difficulty = _difficulty(args.difficulty)
    policy, needs_latent = _make_policy(cfg, args)
    library = _library(cfg, args.terrains)
    env = LandingEnv(cfg.env_config(difficulty=difficulty), library, _encoder(cfg, required=needs_latent))
    summary = baselines.evaluate(policy, env, args.n, seed=cfg.seed, digest=digest(cfg))
    out = Path(args.out or Path(cfg.paths.out_dir) / f"eval_{policy.name}_{difficulty}")
    baselines.write_summary(summary, out)
    print(baselines.format_table_row(summary))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_run_episode(cfg, args):
    policy, needs_latent = _make_policy(cfg, args)
    difficulty = _difficulty(args.difficulty)
    library = _library(cfg, args.terrains)
    env = LandingEnv(cfg.env_config(difficulty=difficulty), library, _encoder(cfg, required=needs_latent))
    out = ensure_dir(args.out or Path(cfg.paths.out_dir) / f"episode_{policy.name}_{args.seed}")
    seed = baselines.eval_seeds(cfg.seed, args.seed + 1)[args.seed]
    tag = {"config_digest": digest(cfg)}
    result = baselines.run_episode(policy, env, seed, args.seed, log_path=out / "trajectory.csv", extra_columns=tag)
    with open(out / "summary.json", "w") as fh:
        json.dump({**result.row(), **tag}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    ep = env.episode
    with open(out / "frames.csv", "w") as fh:
        fh.write("frame,timestamp,center_x,center_y,w_x,w_y,row0,row1,col0,col1,config_digest\n")
        for k, f in enumerate(ep.frames):
            r0, r1, c0, c1 = fov_box(ep.entry.dem, f)
            fh.write(f"{k},{f.timestamp!r},{f.center[0]!r},{f.center[1]!r},{f.w_x!r},{f.w_y!r},"
                     f"{r0},{r1},{c0},{c1},{tag['config_digest']}\n")
    if args.render:
        rows = ep.log.rows
        for k, f in enumerate(ep.frames):
            track = [(r["r_x"], r["r_y"]) for r in rows if r["t"] <= f.timestamp]
            write_pgm(out / f"frame_{k:03d}.pgm", render_frame(ep.entry.maps.v_d, ep.entry.dem, f, track))
        track = [(r["r_x"], r["r_y"]) for r in rows]
        write_pgm(out / "final.pgm", render_frame(ep.entry.maps.v_d, ep.entry.dem, ep.frames[-1], track))
    print(f"{policy.name} seed {args.seed}: cause {result.cause}, safe {result.safe_landing}, "
          f"miss {result.miss_distance:.3f} m, reward {result.total_reward:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="hdaland", description="Hazard-avoiding lunar landing: terrain, guidance, TD3 agent.",
                     epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON configuration file (defaults used when omitted)")
    parser.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    sub = parser.add_subparsers(dest="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_config_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
        p.set_defaults(func=func)
        return p

    p = add("gen-terrain", cmd_gen_terrain, "generate DEMs and their safety maps")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--holdout", type=int, default=0, help="mark the last N terrains as the variation split")
    p.add_argument("--out", help="output directory (default paths.terrain_dir)")
    p.add_argument("--pgm", action="store_true", help="also write PGM previews")

    p = add("train-autoencoder", cmd_train_autoencoder, "collect random-rollout observations and fit the autoencoder")
    p.add_argument("--rollouts", type=int)
    p.add_argument("--terrains", type=int, help="use only the first N terrains")

    p = add("train", cmd_train, "train the TD3 agent")
    p.add_argument("--updates", type=int, help="total gradient updates (overrides td3.total_updates)")
    p.add_argument("--terrains", type=int, help="use only the first N terrains")
    p.add_argument("--train-autoencoder", action="store_true", help="fit the autoencoder first")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in paths.checkpoint_dir")
    p.add_argument("--stop-after", type=int, help="stop at the first episode boundary after N updates")

    for name, func, text in (("evaluate", cmd_evaluate, "evaluate a policy over seeded episodes"),
                             ("run-episode", cmd_run_episode, "fly one episode and write its logs")):
        p = add(name, func, text)
        p.add_argument("--policy", default="single", help=f"one of {', '.join(POLICIES)}")
        p.add_argument("--difficulty", default="training-random", help="training-random | hard-eval (alias: hard)")
        p.add_argument("--terrains", type=int, help="use only the first N terrains")
        p.add_argument("--actor", help="actor checkpoint (default <paths.checkpoint_dir>/actor.json)")
        p.add_argument("--zero-shift", action="store_true", help="fixed policy without an actor: no target shifts")
        p.add_argument("--out", help="output directory")
        if name == "evaluate":
            p.add_argument("--n", type=int, default=100, help="number of episodes")
        else:
            p.add_argument("--seed", type=int, default=0, help="episode index within the evaluation seed stream")
            p.add_argument("--render", action="store_true", help="write PGM frames")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.print_config:
            sys.stdout.write(dumps(cfg))
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"hdaland: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifactError, OSError, RuntimeError, ValueError) as exc:
        print(f"hdaland: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
