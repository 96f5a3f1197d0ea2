"""``isdnn-lab`` command line: gen, train, eval, bench, repro-paper.

Exit codes: 0 success, 2 configuration/validation, 3 I/O, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
import typing
from pathlib import Path
from typing import List, Optional

from . import __version__
from .airsim import DatasetConfig, gen_dataset, load_dataset, save_dataset
from .bench import bench, emit_report, make_estimators, snr_sweep
from .channel import geometry_from_config
from .config import RunConfig, config_keys, load_config
from .errors import ConfigError, DimensionError, EstimationError, MetricError, NumericError, StorageError
from .network import parameter_count
from .train import (
    TrainConfig,
    fresh_network,
    load_checkpoint,
    load_train_state,
    save_checkpoint,
    save_train_state,
    train_loop,
    write_history_csv,
)

log = logging.getLogger("isdnn_lab")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# short aliases for the most used keys
ALIASES = {
    "system.nt": ["--nt"],
    "system.nr": ["--nr"],
    "system.pilots": ["--np"],
    "network.layers": ["--layers"],
    "network.psi": ["--psi"],
    "network.e1": ["--e1"],
    "training.max_iterations": ["--max-iterations"],
    "training.batch_size": ["--batch-size"],
    "training.learning_rate": ["--lr"],
    "eval.estimators": ["--estimators"],
    "eval.repetitions": ["--repetitions"],
    "eval.format": ["--format"],
    "eval.machine": ["--machine"],
}

REFERENCE_OVERRIDES = {
    "system.nt": 8,
    "system.nr": 64,
    "system.pilots": 8,
    "system.modulation": "16qam",
    "channel.model": "rayleigh",
    "dataset.train_size": 50000,
    "dataset.test_size": 10000,
    "dataset.snr_db": [0.0, 5.0, 10.0, 15.0, 20.0],
    "network.psi": "tanh",
    "training.learning_rate": 1e-4,
}
REFERENCE_NMSE_BAND = (0.0009, 0.0028)


def _flag(key: str) -> str:
    return "--" + key.replace(".", "-").replace("_", "-")


def _type_name(hint) -> str:
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        return "json"
    if origin is list:
        return "list"
    return getattr(hint, "__name__", str(hint))


def _keys_epilog() -> str:
    lines = ["config keys (JSON path = flag, flag wins over --config):"]
    for key, hint, default in config_keys():
        lines.append(f"  {key:<28} {_flag(key):<32} [{_type_name(hint)}] default: {default!r}")
    return "\n".join(lines)


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON run configuration")
    for key, hint, default in config_keys():
        names = [_flag(key)] + ALIASES.get(key, [])
        g.add_argument(*names, dest="cfg:" + key, default=None, metavar=_type_name(hint).upper(),
                       help=f"{key} (default {default!r})")
    g.add_argument("--structured", dest="structured", action="store_true",
                   help="use S-ISDNN (network.mode=structured); needs structured side info")
    g.add_argument("--fixed-pilots", dest="fixed_pilots", action="store_true",
                   help="share one pilot block across the dataset (dataset.fixed_pilots=true)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(
        prog="isdnn-lab",
        description="Deep-unfolded massive MIMO channel estimation: data, training, evaluation.",
        epilog=_keys_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[parent], help="generate train/test datasets")
    g.add_argument("--out", help="output directory (overrides dataset.train_path/test_path)")

    t = sub.add_parser("train", parents=[parent], help="train ISDNN / S-ISDNN")
    t.add_argument("--dataset", help="training dataset (default dataset.train_path)")
    t.add_argument("--out", help="checkpoint manifest path (default training.checkpoint)")
    t.add_argument("--resume", help="training-state directory to continue from")

    for name, text in (("eval", "NMSE-vs-SNR sweep"), ("bench", "sweep plus inference timing")):
        e = sub.add_parser(name, parents=[parent], help=text)
        e.add_argument("--checkpoint", help="checkpoint manifest (needed for isdnn/sisdnn)")
        e.add_argument("--dataset", help="test dataset (default dataset.test_path)")
        e.add_argument("--out", help="report path (default eval.output)")

    r = sub.add_parser("repro-paper", parents=[parent], help="reference configuration end to end (8x64, K=4 and 5)")
    r.add_argument("--out", default="runs/repro", help="working directory")
    r.add_argument("--layer-counts", default="4,5", help="comma-separated layer counts to train")
    r.add_argument("--scale", type=float, default=1.0,
                   help="multiply dataset sizes (smoke runs only; 1.0 keeps the reference sizes)")
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    cfg = load_config(args.config, overrides)
    if args.structured:
        cfg.network.mode = "structured"
    if args.fixed_pilots:
        cfg.dataset.fixed_pilots = True
    return cfg


def _dataset_config(cfg: RunConfig, count: int, seed: int) -> DatasetConfig:
    structured = cfg.channel.model == "structured"
    geometry = None
    if structured:
        geometry = geometry_from_config(
            {"type": cfg.channel.geometry.type, "spacing": cfg.channel.geometry.spacing,
             "axis": cfg.channel.geometry.axis, "counts": cfg.channel.geometry.counts,
             "positions": cfg.channel.geometry.positions},
            cfg.system.nr,
        )
    return DatasetConfig(
        nt=cfg.system.nt, nr=cfg.system.nr, n_pilots=cfg.system.pilots, count=count,
        snr_db=list(cfg.dataset.snr_db), seed=seed, structured=structured,
        fixed_pilots=cfg.dataset.fixed_pilots, geometry=geometry,
    )


def cmd_gen(cfg: RunConfig, out: Optional[str] = None) -> List[Path]:
    cfg.validate()
    train_path = Path(out) / "train.ceds" if out else Path(cfg.dataset.train_path)
    test_path = Path(out) / "test.ceds" if out else Path(cfg.dataset.test_path)
    written = []
    for path, count, seed in ((train_path, cfg.dataset.train_size, cfg.dataset.seed),
                              (test_path, cfg.dataset.test_size, cfg.dataset.seed + 1)):
        ds = gen_dataset(_dataset_config(cfg, count, seed))
        written.append(save_dataset(path, ds))
        print(f"wrote {path} ({len(ds)} records, Nt={ds.nt} Nr={ds.nr} Np={ds.n_pilots}, "
              f"{'structured' if ds.structured else 'rayleigh'}, seed={seed})")
    return written


def _train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.training
    return TrainConfig(batch_size=t.batch_size, learning_rate=t.learning_rate, max_iterations=t.max_iterations,
                       eval_every=t.eval_every, patience=t.patience, seed=t.seed,
                       validation_size=t.validation_size)


def cmd_train(cfg: RunConfig, dataset: Optional[str] = None, out: Optional[str] = None,
              resume: Optional[str] = None):
    cfg.validate()
    tcfg = _train_config(cfg)
    tcfg.validate()
    data = load_dataset(dataset or cfg.dataset.train_path)
    structured = cfg.network.mode == "structured"
    if structured and not data.structured:
        raise ConfigError("structured (S-ISDNN) training needs a dataset with side information")
    if (data.nt, data.nr) != (cfg.system.nt, cfg.system.nr):
        raise DimensionError(f"dataset is {data.nt} x {data.nr}, config says {cfg.system.nt} x {cfg.system.nr}")
    nval = tcfg.validation_size
    if not 0 < nval < len(data):
        raise ConfigError(f"validation_size={nval} must be between 1 and {len(data) - 1}")
    train_set, val_set = data.split(len(data) - nval)

    state = load_train_state(resume) if resume else None
    net = state.net if state else fresh_network(
        cfg.network.layers, data.nt, data.nr, tcfg.seed,
        psi=cfg.network.psi, e1_mode=cfg.network.e1, mode=cfg.network.mode,
    )

    def progress(s):
        row = s.history[-1]
        log.info("iter %d  loss %.6g  val_nmse %.6g%s", row.iteration, row.train_loss, row.val_nmse,
                 "  (best)" if s.best_iteration == row.iteration else "")

    result = train_loop(net, train_set, val_set, tcfg, state=state, on_eval=progress)
    out_path = Path(out or cfg.training.checkpoint)
    meta = {
        "config": cfg.to_dict(),
        "best_iteration": result.state.best_iteration,
        "best_val_nmse": result.best_val,
        "iterations_run": result.state.iteration,
        "stopped_early": result.state.stopped,
        "dataset_seed": data.seed,
    }
    save_checkpoint(out_path, result.net, history=result.history, meta=meta)
    write_history_csv(cfg.training.history if out is None else out_path.with_suffix(".history.csv"),
                      result.history)
    if cfg.training.state_dir:
        save_train_state(cfg.training.state_dir, result.state, meta)
    print(f"checkpoint {out_path}: K={result.net.K}, {parameter_count(result.net.K, result.net.nr)} parameters, "
          f"best val NMSE {result.best_val:.6g} at iteration {result.state.best_iteration} "
          f"({result.state.iteration} iterations run)")
    return result


def _checkpoint_id(path: Path) -> str:
    blob = path.with_suffix(".bin")
    digest = hashlib.sha256(blob.read_bytes()).hexdigest()[:16] if blob.exists() else "?"
    return f"{path.name}:{digest}"


def _prepare_eval(cfg: RunConfig, checkpoint, dataset):
    cfg.validate()
    data = load_dataset(dataset or cfg.dataset.test_path)
    names = list(cfg.eval.estimators)
    net = None
    meta = {"estimators": names}
    if any(n in ("isdnn", "sisdnn") for n in names):
        if not checkpoint:
            raise ConfigError("isdnn/sisdnn estimators need --checkpoint")
        ck = load_checkpoint(checkpoint)
        net = ck.net
        if (net.nt, net.nr) != (data.nt, data.nr):
            raise DimensionError(f"checkpoint is {net.nt} x {net.nr}, dataset is {data.nt} x {data.nr}")
        if net.structured and not data.structured:
            raise ConfigError("S-ISDNN checkpoint needs a dataset with side information")
        meta["checkpoint"] = _checkpoint_id(Path(checkpoint))
        meta["layers"] = net.K
    return data, make_estimators(names, net), meta


def cmd_eval(cfg: RunConfig, checkpoint=None, dataset=None, out=None):
    data, ests, meta = _prepare_eval(cfg, checkpoint, dataset)
    report = snr_sweep(ests, data, n_chunks=cfg.eval.chunks)
    report.metadata.update(meta)
    path = emit_report(report, out or cfg.eval.output, cfg.eval.format)
    for r in report.rows:
        print(f"{r.estimator:>10}  {r.snr_db:5.1f} dB  NMSE {r.nmse_linear:.6g} ({r.nmse_db:.3f} dB)")
    print(f"report {path}")
    return report


def cmd_bench(cfg: RunConfig, checkpoint=None, dataset=None, out=None):
    if cfg.eval.repetitions < 3:
        raise ConfigError("eval.repetitions must be >= 3")
    data, ests, meta = _prepare_eval(cfg, checkpoint, dataset)
    machine = cfg.eval.machine or f"{platform.machine()} {platform.processor() or platform.system()}".strip()
    report = bench(ests, data, cfg.eval.repetitions, n_chunks=cfg.eval.chunks)
    report.metadata.update(meta | {"machine": machine, "repetitions": cfg.eval.repetitions})
    path = emit_report(report, out or cfg.eval.output, cfg.eval.format)
    print(f"machine: {machine}")
    for r in report.rows:
        print(f"{r.estimator:>10}  {r.snr_db:5.1f} dB  NMSE {r.nmse_linear:.6g}  "
              f"{r.runtime_s_per_sample:.4g} s/sample")
    print(f"report {path}")
    return report


def cmd_repro_paper(cfg: RunConfig, out: str, layers: str, scale: float = 1.0):
    for key, value in REFERENCE_OVERRIDES.items():
        *path, leaf = key.split(".")
        obj = cfg
        for p in path:
            obj = getattr(obj, p)
        setattr(obj, leaf, value)
    if scale != 1.0:
        if scale <= 0:
            raise ConfigError("--scale must be positive")
        cfg.dataset.train_size = max(int(cfg.dataset.train_size * scale), 1)
        cfg.dataset.test_size = max(int(cfg.dataset.test_size * scale), 1)
        print(f"warning: dataset sizes scaled by {scale} (train {cfg.dataset.train_size}, "
              f"test {cfg.dataset.test_size}); not the reference configuration")
    work = Path(out)
    cfg.dataset.train_path = str(work / "train.ceds")
    cfg.dataset.test_path = str(work / "test.ceds")
    cmd_gen(cfg)
    results = {}
    for k in [int(x) for x in layers.split(",") if x]:
        cfg.network.layers = k
        cfg.training.checkpoint = str(work / f"isdnn_k{k}.json")
        cfg.training.history = str(work / f"isdnn_k{k}.history.csv")
        res = cmd_train(cfg)
        cfg.eval.estimators = ["ls", "mmse", "diag-init", "isdnn"]
        cfg.eval.output = str(work / f"report_k{k}.csv")
        cmd_eval(cfg, checkpoint=cfg.training.checkpoint)
        lo, hi = REFERENCE_NMSE_BAND
        inside = lo <= res.best_val <= hi
        print(f"K={k}: final validation NMSE {res.best_val:.6g}; reference band [{lo}, {hi}] "
              f"{'reached' if inside else 'not reached'}")
        results[k] = res.best_val
    return results


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve_config(args)
        if args.command == "gen":
            cmd_gen(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.dataset, args.out, args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.dataset, args.out)
        elif args.command == "bench":
            cmd_bench(cfg, args.checkpoint, args.dataset, args.out)
        elif args.command == "repro-paper":
            cmd_repro_paper(cfg, args.out, args.layer_counts, args.scale)
    except (ConfigError, DimensionError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StorageError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, EstimationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
