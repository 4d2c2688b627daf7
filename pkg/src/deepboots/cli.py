"""``deepboots`` command line: train, eval, decompose, ablate, theory.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
Every command writes ``<command>.manifest.json`` into the output directory
(``--out``, else ``$DEEPBOOTS_OUT``, else ``./deepboots_runs``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DEFAULT_SPLIT,
    DataError,
    SeriesDataset,
    WindowBatch,
    all_windows,
    chronological_split,
    load_csv,
    standardize_splits,
)
from .metrics import MetricError, parse_metric
from .model import ModelConfig, decompose, init_params
from .theory import CHECKS, TheoryInputError, run_check
from .training import TrainConfig, TrainingDiverged, evaluate, train

log = logging.getLogger("deepboots")

OUT_ENV = "DEEPBOOTS_OUT"
CHECKPOINT_NAME = "checkpoint.dbt"
DECOMPOSE_TOLERANCE = 1e-9

# variant token -> (input_agg, output_agg or None for no output stream, gating)
VARIANTS: dict[str, tuple[str, str | None, bool]] = {
    "+X": ("add", None, False),
    "-X": ("subtract", None, False),
    "+X+Y": ("add", "add", False),
    "+X-Y": ("add", "subtract", False),
    "-X+Y": ("subtract", "add", False),
    "-X-Y": ("subtract", "subtract", False),
    "-X-Y+G": ("subtract", "subtract", True),
}
_AGG_FLAG = {"sub": "subtract", "add": "add"}
_ATTENTION_FLAG = {"full": "full", "freq": "frequency"}


class UsageError(Exception):
    """Bad flag values detected after argparse; exit code 2."""


class RunError(Exception):
    """Runtime or data failure; exit code 1."""


def normalize_variant(token: str) -> str:
    t = token.strip().replace("−", "-").replace("–", "-").upper()
    if t not in VARIANTS:
        raise UsageError(f"unknown ablation variant {token!r}; choose from {', '.join(VARIANTS)}")
    return t


# -- shared plumbing -------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "deepboots_runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_manifest(out: Path, command: str, argv: Sequence[str], config: dict, seed, fingerprint, artifacts, t0):
    path = out / f"{command}.manifest.json"
    _write_json(
        path,
        {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seed": seed,
            "dataset_sha256": fingerprint,
            "artifacts": {k: str(v) for k, v in artifacts.items()},
            "wall_time_seconds": time.perf_counter() - t0,
        },
    )
    return path


@dataclass
class Prepared:
    dataset: SeriesDataset
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    data_settings: dict


def _prepare(path, input_len, pred_len, split=DEFAULT_SPLIT, scale="none", date_column="date") -> Prepared:
    ds = load_csv(path, date_column=date_column or None)
    parts = chronological_split(ds, tuple(split), min_length=input_len + pred_len)
    if scale == "standard":
        parts, _, _ = standardize_splits(*parts)
    windows = [all_windows(p, input_len, pred_len) for p in parts]
    settings = {"split": list(split), "scale": scale, "date_column": date_column}
    return Prepared(ds, *windows, settings)


def _model_config(args, n_features: int, **override) -> ModelConfig:
    kw = dict(
        input_len=args.input_len,
        pred_len=args.pred_len,
        n_features=n_features,
        blocks=args.blocks,
        embed=args.embed,
        hidden=args.hidden,
        heads=args.heads,
        ff_hidden=args.ff_hidden,
        dropout=args.dropout,
        attention=_ATTENTION_FLAG[args.attention],
        input_agg=_AGG_FLAG[args.input_agg],
        output_agg=_AGG_FLAG[args.output_agg],
        gating=args.gating == "on",
        seed=args.seed,
    )
    kw.update(override)
    try:
        return ModelConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(args, seed: int) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=args.lr,
            batch_size=args.batch,
            max_epochs=args.epochs,
            patience=args.patience,
            clip_norm=None if args.clip_norm <= 0 else args.clip_norm,
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fit(prep: Prepared, config: ModelConfig, tc: TrainConfig):
    params = init_params(config, config.seed)
    try:
        return train(params, config, prep.train, prep.val, tc)
    except TrainingDiverged as exc:
        raise RunError(f"training diverged: {exc}") from None


# -- commands --------------------------------------------------------------------


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    prep = _prepare(args.data, args.input_len, args.pred_len, args.split, args.scale, args.date_column)
    config = _model_config(args, prep.dataset.n_features)
    tc = _train_config(args, args.seed)
    out = _out_dir(args)
    params, hist = _fit(prep, config, tc)
    meta = {
        "train": tc.to_dict(),
        "data": prep.data_settings,
        "dataset_sha256": prep.dataset.fingerprint(),
        "best_epoch": hist.best_epoch,
        "best_val_loss": hist.best_val_loss,
    }
    ckpt, hist_csv = out / CHECKPOINT_NAME, out / "history.csv"
    save_checkpoint(ckpt, params, config, meta)
    hist.write_csv(hist_csv)
    _write_manifest(
        out, "train", args.argv, {"model": config.to_dict(), "train": tc.to_dict(), "data": prep.data_settings},
        args.seed, meta["dataset_sha256"], {"checkpoint": ckpt, "history": hist_csv}, t0,
    )
    print(json.dumps({"checkpoint": str(ckpt), "epochs": len(hist.val_loss), "best_epoch": hist.best_epoch,
                      "best_val_loss": hist.best_val_loss}, sort_keys=True))
    return 0


def _load_for_data(args):
    try:
        params, config, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise RunError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    data = meta.get("data", {})
    prep = _prepare(
        args.data, config.input_len, config.pred_len, tuple(data.get("split", DEFAULT_SPLIT)),
        data.get("scale", "none"), data.get("date_column", "date"),
    )
    if prep.dataset.n_features != config.n_features:
        raise RunError(
            f"checkpoint expects {config.n_features} features, data has {prep.dataset.n_features}"
        )
    return params, config, meta, prep


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    specs = [s for s in args.metrics.split(",") if s.strip()]
    try:
        for s in specs:
            parse_metric(s)
    except MetricError as exc:
        raise UsageError(str(exc)) from None
    params, config, meta, prep = _load_for_data(args)
    try:
        report = evaluate(params, config, prep.test, specs)
    except MetricError as exc:
        raise RunError(str(exc)) from None
    out = _out_dir(args)
    path = out / "eval.json"
    body = report.to_dict() | {"split": "test", "windows": len(prep.test)}
    _write_json(path, body)
    _write_manifest(out, "eval", args.argv, {"model": config.to_dict(), "metrics": specs, "data": meta.get("data")},
                    config.seed, prep.dataset.fingerprint(), {"report": path}, t0)
    print(json.dumps(body, sort_keys=True, indent=2))
    return 0


def cmd_decompose(args) -> int:
    t0 = time.perf_counter()
    params, config, meta, prep = _load_for_data(args)
    windows = getattr(prep, args.split)
    k = args.window_index
    if not 0 <= k < len(windows):
        raise RunError(f"window index {k} out of range: {args.split} split has {len(windows)} windows")
    try:
        dec = decompose(windows.inputs[k : k + 1], params, config)
    except ValueError as exc:
        raise RunError(str(exc)) from None
    total = np.sum([c[0] for c in dec.contributions], axis=0)
    err = float(np.max(np.abs(total - dec.prediction[0])))
    if err > DECOMPOSE_TOLERANCE:
        raise RunError(f"block contributions miss the prediction by {err:.3e} (> {DECOMPOSE_TOLERANCE})")
    out = _out_dir(args)
    names = prep.dataset.feature_names
    artifacts = {}
    for l, c in enumerate(dec.contributions, start=1):
        path = out / f"block_{l}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestep", "feature", "contribution"])
            for t in range(c.shape[1]):
                for d in range(c.shape[2]):
                    w.writerow([t, names[d], repr(float(c[0, t, d]))])
        artifacts[f"block_{l}"] = path
    path = out / "residual.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "embed_index", "value"])
        res = dec.residual[0]
        for d in range(res.shape[0]):
            for e in range(res.shape[1]):
                w.writerow([names[d], e, repr(float(res[d, e]))])
    artifacts["residual"] = path
    _write_manifest(out, "decompose", args.argv,
                    {"model": config.to_dict(), "split": args.split, "window_index": k, "max_abs_error": err},
                    config.seed, prep.dataset.fingerprint(), artifacts, t0)
    print(json.dumps({"blocks": config.blocks, "max_abs_error": err,
                      "files": [str(p) for p in artifacts.values()]}, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    tokens = [normalize_variant(v) for item in args.variants for v in item.split(",") if v.strip()]
    if not tokens:
        raise UsageError("no ablation variants given")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    prep = _prepare(args.data, args.input_len, args.pred_len, args.split, args.scale, args.date_column)
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = []
    for tok in tokens:
        in_agg, out_agg, gating = VARIANTS[tok]
        runs = []
        for s in seeds:
            config = _model_config(
                args, prep.dataset.n_features, input_agg=in_agg, output_agg=out_agg or "subtract",
                output_stream=out_agg is not None, gating=gating, seed=s,
            )
            params, hist = _fit(prep, config, _train_config(args, s))
            rep = evaluate(params, config, prep.test, ("mse", "mae"))
            runs.append({"seed": s, "mse": rep["mse"], "mae": rep["mae"], "best_epoch": hist.best_epoch})
            log.info("variant %s seed %d: mse %.6f mae %.6f", tok, s, rep["mse"], rep["mae"])
        mse = np.array([r["mse"] for r in runs])
        mae = np.array([r["mae"] for r in runs])
        rows.append({
            "variant": tok,
            "input_agg": in_agg,
            "output_agg": out_agg,
            "gating": gating,
            "runs": runs,
            "mse_mean": float(mse.mean()),
            "mse_std": float(mse.std(ddof=1)) if len(mse) > 1 else 0.0,
            "mae_mean": float(mae.mean()),
            "mae_std": float(mae.std(ddof=1)) if len(mae) > 1 else 0.0,
        })
    out = _out_dir(args)
    path = out / "ablation.json"
    body = {"seeds": seeds, "variants": rows}
    _write_json(path, body)
    _write_manifest(out, "ablate", args.argv, {"variants": tokens, "data": prep.data_settings},
                    seeds, prep.dataset.fingerprint(), {"report": path}, t0)
    print(json.dumps(body, sort_keys=True, indent=2))
    return 0


def cmd_theory(args) -> int:
    t0 = time.perf_counter()
    names = list(CHECKS) if "all" in args.check else list(dict.fromkeys(args.check))
    opts = dict(L=args.L, alpha=args.alpha, nu=args.nu, mu=args.mu, N=args.N,
                sigma2=args.sigma2, sigma_t2=args.sigma_t2)
    try:
        reports = [run_check(n, trials=args.trials, seed=args.seed, **opts) for n in names]
    except TheoryInputError as exc:
        raise RunError(f"invalid theory parameters: {exc}") from None
    out = _out_dir(args)
    path = out / "theory.json"
    body = {"passed": all(r.passed for r in reports), "reports": [r.to_dict() for r in reports]}
    text = json.dumps(body, sort_keys=True, indent=2, default=float)
    path.write_text(text + "\n")
    _write_manifest(out, "theory", args.argv, {"checks": names, **opts, "trials": args.trials},
                    args.seed, None, {"report": path}, t0)
    print(text)
    return 0 if body["passed"] else 1


# -- parser ----------------------------------------------------------------------


def _split_arg(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated ratios")
    return parts


def _add_data_flags(p: argparse.ArgumentParser, windows: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file: header row, optional 'date' column, numeric features"
                   + ("" if windows else "; split, scaling and date column come from the checkpoint"))
    if windows:
        p.add_argument("--date-column", default="date", help="column dropped from values ('' for none)")
        p.add_argument("--input-len", type=int, required=True)
        p.add_argument("--pred-len", type=int, required=True)
        p.add_argument("--split", type=_split_arg, default=DEFAULT_SPLIT, help="train,val,test ratios")
        p.add_argument("--scale", choices=("none", "standard"), default="none",
                       help="'standard' rescales all splits by train-segment feature statistics")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--embed", type=int, default=512)
    p.add_argument("--hidden", type=int, default=None, help="per-block output width (default: pred-len)")
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--ff-hidden", type=int, default=None, help="feed-forward width (default: 4 * embed)")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--attention", choices=("full", "freq"), default="full")
    p.add_argument("--input-agg", choices=("sub", "add"), default="sub")
    p.add_argument("--output-agg", choices=("sub", "add"), default="sub")
    p.add_argument("--gating", choices=("on", "off"), default="on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--clip-norm", type=float, default=5.0, help="global gradient norm cap; <= 0 disables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepboots", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint.dbt and history.csv "
                                     "(epoch,train_loss,val_loss,seconds)")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-split metrics; writes eval.json {metrics:{name:value}, n, split, windows}")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p, windows=False)
    p.add_argument("--metrics", default="mse,mae", help="comma list of mse,mae,rmsp,mape,smape,mase:m,quantile:q")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="per-block contributions for one window; writes block_<l>.csv "
                                         "(timestep,feature,contribution) and residual.csv (feature,embed_index,value)")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p, windows=False)
    p.add_argument("--window-index", type=int, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("ablate", help="train aggregation variants over several seeds; writes ablation.json")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--variants", nargs="+", required=True, help=f"tokens from {', '.join(VARIANTS)}")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds, counting up from --seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("theory", help="numerical checks of the ensemble results; writes theory.json")
    p.add_argument("--check", nargs="+", choices=(*CHECKS, "all"), default=["all"])
    p.add_argument("--trials", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--N", type=int, help="ensemble size for th1")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--sigma-t2", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory)
    return parser


def _fold_variants(argv: list[str]) -> list[str]:
    """Variant tokens start with '-' or '+', which argparse would read as flags."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] != "--variants":
            out.append(argv[i])
            i += 1
            continue
        j = i + 1
        while j < len(argv) and not argv[j].startswith("--"):
            j += 1
        out.append("--variants=" + ",".join(argv[i + 1 : j]))
        i = j
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_fold_variants(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deepboots: error: {exc}", file=sys.stderr)
        return 2
    except (RunError, DataError, OSError) as exc:
        print(f"deepboots: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
