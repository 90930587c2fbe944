"""Command line entry point: ``lfcombat train|eval|export|inspect``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
The ``LFCOMBAT_OUT`` environment variable replaces the configured output
root; an explicit ``--out`` flag still wins.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

from . import arena as ar
from . import checkpoint
from .config import RunConfig, from_dict, load_config
from .curriculum import pretrain
from .errors import ConfigError, ProtocolError
from .evalharness import MatchEnv, MatchRecord, tournament
from .hrl import PolicyParams
from .lfmappo import METRIC_FIELDS, CollectEnv, new_policy, training_run

log = logging.getLogger("lfcombat")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "LFCOMBAT_OUT"
TOURNAMENT_FIELDS = ("stage", "wins", "draws", "losses", "win_rate", "draw_rate", "loss_rate")
EXPORT_FORMATS = ("trajectory", "long")
LONG_HEADER = ("time", "uav_id", "team", "variable", "value")


def header_line(run_id: str, config_hash: str) -> str:
    return f"# run_id={run_id} config_hash={config_hash}\n"


def write_text_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: tuple | list, rows, run_id: str, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(header_line(run_id, config_hash))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


# ---------------------------------------------------------------- checkpoints

def save_policy(path: str, params: PolicyParams, cfg: RunConfig, iteration: int) -> None:
    meta = {"policy": params.meta(), "config": cfg.to_dict(), "config_hash": cfg.hash(), "run_id": cfg.run_id,
            "iteration": iteration, "seed": cfg.run.seed}
    checkpoint.save(path, params.named_tensors(), meta)


def load_policy(path: str) -> tuple[PolicyParams, dict]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors, meta = checkpoint.load(path)
    return PolicyParams.from_tensors(tensors, meta["policy"]), meta


def resolve_opponent(opponent: str, own_meta: dict, force: bool):
    """``scripted:<kind>`` or a checkpoint path, refusing mismatched configs unless forced."""
    if opponent.startswith("scripted:"):
        return opponent
    params, meta = load_policy(opponent)
    if meta["config_hash"] != own_meta["config_hash"] and not force:
        # network shapes may still match; the environment definitions do not
        raise ProtocolError(f"config hash mismatch: {own_meta['config_hash'][:12]} vs {meta['config_hash'][:12]} "
                            f"({opponent}); pass --force to evaluate anyway")
    return params


def output_root(flag: str | None, cfg: RunConfig) -> str:
    return flag or os.environ.get(OUT_ENV) or cfg.run.out_dir


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    if args.resume:
        params, meta = load_policy(args.resume)
        cfg = from_dict(meta["config"])
        start = meta["iteration"] + 1
        out_dir = os.path.dirname(os.path.abspath(args.resume))
        iters = cfg.train.iters - start if args.iters is None else args.iters
    else:
        cfg = load_config(args.config, args.set, args.seed)
        params = new_policy(cfg.train.variant, cfg.arena.team_size, cfg.model, cfg.run.seed)
        start = 0
        out_dir = os.path.join(output_root(args.out, cfg), cfg.run_id)
        iters = cfg.train.iters if args.iters is None else args.iters
    if iters < 0:
        raise ConfigError([f"--iters must be >= 0, got {iters}"])
    os.makedirs(out_dir, exist_ok=True)
    rid, chash = cfg.run_id, cfg.hash()
    write_text_atomic(os.path.join(out_dir, "config.yaml"), header_line(rid, chash) + cfg.dump())
    metrics_path = os.path.join(out_dir, "metrics.csv")
    if not args.resume or not os.path.exists(metrics_path):
        write_text_atomic(metrics_path, csv_text(METRIC_FIELDS, [], rid, chash))
    env = CollectEnv.from_run_config(cfg)
    menv = MatchEnv.from_run_config(cfg)

    def evaluate(p, it):
        res = tournament(p, cfg.train.opponent, cfg.train.eval_matches, 1_000_000 + cfg.run.seed * 10_000, menv)
        return res.win_rate

    if not args.resume and cfg.train.pretrain_iters:
        params = _pretrain(params, cfg, env, out_dir, args.parallel)

    last = start - 1
    for params, m in training_run(params, cfg.train, env, cfg.run.seed, start, iters, args.parallel, evaluate):
        last = m["iteration"]
        with open(metrics_path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([_fmt(m[k]) for k in METRIC_FIELDS])
        if m["aborted"]:
            log.warning("iteration %d rolled back (non-finite loss)", last)
        if cfg.train.checkpoint_every and (last + 1) % cfg.train.checkpoint_every == 0:
            _checkpoint(os.path.join(out_dir, f"ckpt_{last:05d}.lfc"), params, cfg, last)
        log.info("iter %d return %.2f entropy %.3f", last, m["mean_return"], m["entropy"])
    _checkpoint(os.path.join(out_dir, "final.lfc"), params, cfg, last)
    summary = {"run_id": rid, "config_hash": chash, "iterations_completed": last + 1, "out_dir": out_dir}
    write_text_atomic(os.path.join(out_dir, "summary.yaml"),
                      header_line(rid, chash) + "".join(f"{k}: {v}\n" for k, v in summary.items()))
    print(out_dir)
    return EXIT_OK


def _pretrain(params: PolicyParams, cfg: RunConfig, env: CollectEnv, out_dir: str, parallel: int) -> PolicyParams:
    rid, chash = cfg.run_id, cfg.hash()
    rows = []
    for stage, params, m in pretrain(params, cfg.train, env, cfg.run.seed, cfg.train.pretrain_iters, parallel):
        rows.append([stage.subpolicy.name.lower(), *(_fmt(m[k]) for k in METRIC_FIELDS)])
        log.info("pretrain %s iter %d return %.2f", stage.subpolicy.name.lower(), m["iteration"], m["mean_return"])
    write_text_atomic(os.path.join(out_dir, "pretrain.csv"), csv_text(("stage", *METRIC_FIELDS), rows, rid, chash))
    return params


def _checkpoint(path: str, params: PolicyParams, cfg: RunConfig, it: int) -> None:
    try:
        save_policy(path, params, cfg, it)
    except OSError as e:
        # the atomic writer leaves any earlier checkpoint intact
        raise RuntimeError(f"checkpoint write failed ({e.strerror}); previous checkpoints kept") from e


def cmd_eval(args) -> int:
    params, meta = load_policy(args.checkpoint)
    opponent = resolve_opponent(args.vs, meta, args.force)
    cfg = from_dict(meta["config"])
    if args.set:
        cfg = _override(cfg, args.set)
    env = MatchEnv.from_run_config(cfg)
    env.eval.deterministic = not args.stochastic
    n = args.n if args.n is not None else cfg.eval.n
    seed = cfg.run.seed if args.seed is None else args.seed
    records: list[MatchRecord] | None = [] if args.records else None
    res = tournament(params, opponent, n, seed, env, mirrored=args.mirrored or None, records=records,
                     parallel=args.parallel)
    out = args.out or os.environ.get(OUT_ENV) or os.path.join(cfg.run.out_dir, meta["run_id"], "eval")
    os.makedirs(out, exist_ok=True)
    rid, chash = meta["run_id"], meta["config_hash"]
    row = [meta["iteration"], res.wins, res.draws, res.losses, *(_fmt(r) for r in res.rates())]
    name = f"tournament_{args.vs.replace(':', '_').replace(os.sep, '_')}.csv" if args.name is None else args.name
    write_text_atomic(os.path.join(out, name), csv_text(TOURNAMENT_FIELDS, [row], rid, chash))
    for rec in records or []:
        rec.run_id, rec.config_hash = rid, chash
        write_text_atomic(os.path.join(out, f"match_{rec.seed:06d}.json"), header_line(rid, chash) + rec.to_json())
    print(f"wins={res.wins} draws={res.draws} losses={res.losses} "
          f"win_rate={res.win_rate:.4f} draw_rate={res.draw_rate:.4f} loss_rate={res.loss_rate:.4f}")
    return EXIT_OK


def _override(cfg: RunConfig, assignments) -> RunConfig:
    from .config import apply_override
    data = cfg.to_dict()
    for a in assignments:
        apply_override(data, a)
    return from_dict(data)


def load_record(path: str) -> MatchRecord:
    with open(path) as f:
        text = "".join(ln for ln in f if not ln.startswith("#"))
    return MatchRecord.from_json(text)


def long_rows(rec: MatchRecord):
    """One row per (time, uid, variable) for plotting tools."""
    numeric = [c for c in ar.TRAJECTORY_HEADER if c not in ("time", "uav_id", "team", "role")]
    idx = {c: i for i, c in enumerate(ar.TRAJECTORY_HEADER)}
    for row in rec.trajectory:
        for c in numeric:
            yield [_fmt(row[idx["time"]]), row[idx["uav_id"]], row[idx["team"]], c, _fmt(row[idx[c]])]


def cmd_export(args) -> int:
    if args.format not in EXPORT_FORMATS:
        raise ConfigError([f"unknown export format {args.format!r}; supported: {', '.join(EXPORT_FORMATS)}"])
    rec = load_record(args.record)
    if args.format == "trajectory":
        header, rows = ar.TRAJECTORY_HEADER, ([_fmt(x) for x in r] for r in rec.trajectory)
    else:
        header, rows = LONG_HEADER, long_rows(rec)
    out = args.out or os.environ.get(OUT_ENV) or os.path.dirname(os.path.abspath(args.record))
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.record))[0]
    path = os.path.join(out, f"{stem}_{args.format}.csv")
    write_text_atomic(path, csv_text(header, rows, rec.run_id, rec.config_hash))
    print(path)
    return EXIT_OK


def cmd_inspect(args) -> int:
    tensors, meta = checkpoint.load(args.checkpoint)
    info = {k: meta[k] for k in ("run_id", "config_hash", "iteration", "seed") if k in meta}
    info["variant"] = meta.get("policy", {}).get("variant")
    info["tensors"] = {k: list(v.shape) for k, v in sorted(tensors.items()) if not k.startswith("opt/")}
    info["parameters"] = int(sum(v.size for k, v in tensors.items() if not k.startswith("opt/")))
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfcombat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy and write metrics and checkpoints")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--out")
    t.add_argument("--resume", metavar="CKPT")
    t.add_argument("--parallel", type=int, default=1)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="tournament of a checkpoint against a checkpoint or scripted opponent")
    e.add_argument("checkpoint")
    e.add_argument("--vs", required=True, help="checkpoint path or scripted:<kind>")
    e.add_argument("-n", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--mirrored", action="store_true")
    e.add_argument("--force", action="store_true")
    e.add_argument("--stochastic", action="store_true", help="sample actions instead of mean/argmax")
    e.add_argument("--records", action="store_true", help="also write one JSON match record per match")
    e.add_argument("--out")
    e.add_argument("--name", help="report file name")
    e.add_argument("--parallel", type=int, default=1)
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="convert a match record to CSV")
    x.add_argument("record")
    x.add_argument("--format", default="trajectory")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)

    i = sub.add_parser("inspect", help="print checkpoint metadata")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        for m in e.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProtocolError, checkpoint.CheckpointError, FileNotFoundError, OSError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
