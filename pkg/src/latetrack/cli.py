"""Command line surface: gen, simulate, evaluate, train, compare,
horizon.

Every command takes --out and writes a manifest.json there; result
files carry the manifest ref in a comment/field. Randomness funnels
through --seed and fixed-key derivation, so outputs are reproducible
regardless of --workers.

Exit codes: 0 success, 2 validation failure, 3 I/O failure,
4 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .boxes import Sequence, load_sequence, save_sequence
from .config import (Config, ReplayTrackerConfig, predictor_from_config,
                     synthetic_spec_from_config, tracker_from_config)
from .errors import DivergenceError, ReplayExhaustedError, ValidationError
from .evaluate import sigma_grid, sweep
from .latency import LatencyProfile
from .network import load_weights, save_weights
from .predictors import load_kf_noise
from .report import (StageTimer, build_manifest, svg_line_plot, write_csv,
                     write_json, write_manifest, write_markdown_table)
from .seeding import derive_seed, rng_for
from .simulate import (KF, KF_LEARNED, NEURAL_PM, ZERO_MOTION, PredictorAdapter,
                       load_run_log, pick_horizon_n, run_stream, save_run_log,
                       save_trace)
from .training import OptimizerConfig, gen_synthetic, sample_windows, train_pm

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

_LOSS_HEADER = ["epoch", "train_l1", "val_l1"]
_COMPARE_HEADER = ["predictor", "auc_la0", "dp_la0", "mauc", "mdp", "mean_extra_latency_s"]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _load_sequences(arg: str, framerate: float = 30.0) -> list:
    path = Path(arg)
    if path.is_dir():
        files = sorted(path.glob("*.txt"))
        if not files:
            raise ValidationError(f"{path}: no *.txt sequence files")
    elif path.exists():
        files = [path]
    else:
        raise FileNotFoundError(f"no such sequence path: {path}")
    return [load_sequence(f, framerate=framerate) for f in files]


def _map_ordered(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sequence_inputs(arg: str) -> dict:
    path = Path(arg)
    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    return {f"sequence:{f.name}": f for f in files}


def _bind_tracker(tracker, seq_name: str):
    if isinstance(tracker, ReplayTrackerConfig):
        return tracker.bind(seq_name)
    return tracker


def cmd_gen(args) -> int:
    cfg = Config.load(args.spec)
    spec = synthetic_spec_from_config(cfg, seed_override=args.seed)
    timer = StageTimer()
    manifest = build_manifest("gen", spec.seed,
                              {"spec": cfg.values, "resolved_seed": spec.seed},
                              {"spec": args.spec})
    out = _out_dir(args)
    with timer.stage("generate"):
        sequences = gen_synthetic(spec)
    with timer.stage("write"):
        for seq in sequences:
            save_sequence(seq, out / f"{seq.name}.txt", manifest_ref=manifest.ref)
    write_manifest(replace(manifest, stage_seconds=timer.stages), out)
    print(f"wrote {len(sequences)} sequences to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = _seed(args)
    tracker_cfg = Config.load(args.tracker)
    tracker = tracker_from_config(tracker_cfg)
    predictor = None
    inputs = {"tracker": args.tracker, **_sequence_inputs(args.sequences)}
    payload = {"tracker": tracker_cfg.values}
    if args.predictor:
        pred_cfg = Config.load(args.predictor)
        predictor = predictor_from_config(pred_cfg)
        inputs["predictor"] = args.predictor
        payload["predictor"] = pred_cfg.values
    timer = StageTimer()
    sequences = _load_sequences(args.sequences, framerate=args.framerate)
    manifest = build_manifest("simulate", seed, payload, inputs)
    out = _out_dir(args)

    def one(seq: Sequence):
        adapter = _bind_tracker(tracker, seq.name)
        return run_stream(seq, adapter, predictor,
                          seed=derive_seed(seed, "simulate", seq.name))

    with timer.stage("simulate"):
        logs = _map_ordered(one, sequences, args.workers)
    with timer.stage("write"):
        for seq, log in zip(sequences, logs):
            save_run_log(log, out / f"{seq.name}.log.csv", manifest_ref=manifest.ref)
            save_trace(log, out / f"{seq.name}.trace.csv", manifest_ref=manifest.ref)
    write_manifest(replace(manifest, stage_seconds=timer.stages), out)
    print(f"simulated {len(sequences)} sequences to {out}")
    return EXIT_OK


def _curve_summary(seqs, logs) -> dict:
    auc_curve, dp_curve = sweep(seqs, logs)
    return {
        "auc_la0": auc_curve.values[0],
        "dp_la0": dp_curve.values[0],
        "mauc": auc_curve.aggregate,
        "mdp": dp_curve.aggregate,
        "_curves": (auc_curve, dp_curve),
    }


def cmd_evaluate(args) -> int:
    sequences = _load_sequences(args.sequences, framerate=args.framerate)
    logs_path = Path(args.logs)
    pairs = []
    for seq in sequences:
        if logs_path.is_dir():
            log_file = logs_path / f"{seq.name}.log.csv"
            if not log_file.exists():
                raise ValidationError(f"no log for sequence {seq.name!r} in {logs_path}")
        else:
            if len(sequences) != 1:
                raise ValidationError("--logs must be a directory when evaluating several sequences")
            log_file = logs_path
        pairs.append((seq, load_run_log(log_file, seq.name)))
    inputs = {**_sequence_inputs(args.sequences),
              **{f"log:{seq.name}": (logs_path / f"{seq.name}.log.csv" if logs_path.is_dir()
                                     else logs_path) for seq, _ in pairs}}
    manifest = build_manifest("evaluate", _seed(args), {"framerate": args.framerate}, inputs)
    out = _out_dir(args)
    timer = StageTimer()
    with timer.stage("score"):
        seqs = [s for s, _ in pairs]
        logs = [l for _, l in pairs]
        overall = _curve_summary(seqs, logs)
        per_seq = {s.name: _curve_summary([s], [l]) for s, l in pairs}
    auc_curve, dp_curve = overall.pop("_curves")
    with timer.stage("write"):
        grid = sigma_grid()
        write_csv(out / "curves.csv", ["sigma", "auc", "dp"],
                  [(s, a, d) for s, a, d in zip(grid, auc_curve.values, dp_curve.values)],
                  manifest_ref=manifest.ref)
        summary = dict(overall)
        summary["per_sequence"] = {
            name: {k: v for k, v in vals.items() if not k.startswith("_")}
            for name, vals in sorted(per_seq.items())
        }
        write_json(out / "summary.json", summary, manifest_ref=manifest.ref)
        if args.format == "md":
            rows = [(name, f"{v['auc_la0']:.4f}", f"{v['dp_la0']:.4f}",
                     f"{v['mauc']:.4f}", f"{v['mdp']:.4f}")
                    for name, v in sorted(per_seq.items())]
            rows.append(("all", f"{overall['auc_la0']:.4f}", f"{overall['dp_la0']:.4f}",
                         f"{overall['mauc']:.4f}", f"{overall['mdp']:.4f}"))
            write_markdown_table(out / "summary.md",
                                 ["sequence", "auc_la0", "dp_la0", "mauc", "mdp"], rows,
                                 manifest_ref=manifest.ref, title="Latency-aware evaluation")
        if args.format == "svg":
            svg_line_plot(out / "curves.svg",
                          [("AUC@Laσ", grid, auc_curve.values),
                           ("DP@Laσ", grid, dp_curve.values)],
                          title="Latency-aware scores vs permitted latency",
                          x_label="permitted latency σ (frame periods)",
                          y_label="score", manifest_ref=manifest.ref)
    write_manifest(replace(manifest, stage_seconds=timer.stages), out)
    print(f"mAUC={overall['mauc']:.4f} mDP={overall['mdp']:.4f} "
          f"(AUC@La0={overall['auc_la0']:.4f} DP@La0={overall['dp_la0']:.4f})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = Config.load(args.config) if args.config else Config({}, "<defaults>")
    seed = args.seed if args.seed is not None else cfg.get_int("seed", 0)
    epochs = args.epochs if args.epochs is not None else cfg.get_int("epochs", 100)
    # an --epochs override may cut the run short of configured milestones
    milestones = tuple(m for m in cfg.get_ints("milestones", (30, 80)) if m < epochs)
    opt = OptimizerConfig(
        lr=cfg.get_float("lr", 0.03),
        weight_decay=cfg.get_float("weight_decay", 0.01),
        epochs=epochs,
        milestones=milestones,
        batch_size=cfg.get_int("batch_size", 64),
        seed=seed,
    )
    k = cfg.get_int("k", 3)
    horizon = cfg.get_int("horizon", 2)
    stride_set = cfg.get_ints("stride_set", (1, 2))
    c_enc = cfg.get_int("c_enc", 64)
    c_dec = cfg.get_int("c_dec", 32)
    sequences = _load_sequences(args.corpus, framerate=args.framerate)
    inputs = {**_sequence_inputs(args.corpus)}
    if args.config:
        inputs["config"] = args.config
    manifest = build_manifest(
        "train", seed,
        {"optimizer": {"lr": opt.lr, "weight_decay": opt.weight_decay, "epochs": opt.epochs,
                       "milestones": list(opt.milestones), "batch_size": opt.batch_size},
         "window": {"k": k, "horizon": horizon, "stride_set": list(stride_set)},
         "model": {"c_enc": c_enc, "c_dec": c_dec}},
        inputs)
    out = _out_dir(args)
    timer = StageTimer()
    with timer.stage("windows"):
        grouped = []
        for seq in sequences:
            if any(b is None for b in seq.ground_truth):
                raise ValidationError(f"training sequence {seq.name!r} has missing annotations")
            grouped.append(sample_windows(list(seq.ground_truth), k, horizon, stride_set,
                                          rng_for(seed, "windows", seq.name)))
    with timer.stage("train"):
        weights, history = train_pm(grouped, k, horizon, opt, c_enc=c_enc, c_dec=c_dec)
    with timer.stage("write"):
        save_weights(weights, out / "pm_checkpoint.json", manifest_ref=manifest.ref)
        write_csv(out / "loss.csv", _LOSS_HEADER, history, manifest_ref=manifest.ref)
    write_manifest(replace(manifest, stage_seconds=timer.stages), out)
    if history:
        print(f"trained {epochs} epochs; final val L1 {history[-1][2]:.6f}")
    else:
        print("wrote initialized checkpoint (no training epochs)")
    return EXIT_OK


def _parse_predictor_name(name: str, horizon: int, latency: LatencyProfile):
    """none | zero | kf | kf_learned:<noise file> | pm:<checkpoint>"""
    if name == "none":
        return None
    if name == "zero":
        return PredictorAdapter(ZERO_MOTION, horizon, latency)
    if name == "kf":
        return PredictorAdapter(KF, horizon, latency)
    if name.startswith("kf_learned:"):
        q_diag, r_diag = load_kf_noise(name.split(":", 1)[1])
        return PredictorAdapter(KF_LEARNED, horizon, latency,
                                q_diag=q_diag, r_diag=r_diag)
    if name.startswith("pm:"):
        weights = load_weights(name.split(":", 1)[1])
        return PredictorAdapter(NEURAL_PM, weights.n_heads, latency, weights=weights)
    raise ValidationError(
        f"unknown predictor {name!r}; use none, zero, kf, kf_learned:<file>, pm:<checkpoint>")


def cmd_compare(args) -> int:
    seed = _seed(args)
    sequences = _load_sequences(args.sequences, framerate=args.framerate)
    tracker_cfg = Config.load(args.tracker)
    tracker = tracker_from_config(tracker_cfg)
    names = [n.strip() for n in args.predictors.split(",") if n.strip()]
    if not names:
        raise ValidationError("--predictors must name at least one of none,zero,kf,kf_learned,pm")
    timer = StageTimer()
    if args.horizon is not None:
        horizon = args.horizon
    else:
        with timer.stage("pre_run"):
            horizon = pick_horizon_n(sequences[0], _bind_tracker(tracker, sequences[0].name),
                                     seed=derive_seed(seed, "horizon"))
    latency = LatencyProfile.constant(args.pred_latency)
    adapters = [(name, _parse_predictor_name(name, horizon, latency)) for name in names]
    inputs = {"tracker": args.tracker, **_sequence_inputs(args.sequences)}
    for name in names:
        if ":" in name:
            inputs[name.split(":", 1)[0]] = name.split(":", 1)[1]
    manifest = build_manifest(
        "compare", seed,
        {"tracker": tracker_cfg.values, "predictors": names, "horizon": horizon,
         "pred_latency": args.pred_latency},
        inputs)
    out = _out_dir(args)

    rows = []
    curves_by_name = {}
    with timer.stage("simulate_and_score"):
        for name, adapter in adapters:
            def one(seq, adapter=adapter, name=name):
                return run_stream(seq, _bind_tracker(tracker, seq.name), adapter,
                                  seed=derive_seed(seed, "compare", name, seq.name))
            logs = _map_ordered(one, sequences, args.workers)
            auc_curve, dp_curve = sweep(sequences, logs)
            curves_by_name[name] = auc_curve
            invocations = sum(log.predictor_invocations for log in logs)
            total_latency = sum(sum(log.predictor_latencies) for log in logs)
            extra = total_latency / invocations if invocations else 0.0
            rows.append((name, auc_curve.values[0], dp_curve.values[0],
                         auc_curve.aggregate, dp_curve.aggregate, extra))
    with timer.stage("write"):
        write_csv(out / "comparison.csv", _COMPARE_HEADER, rows, manifest_ref=manifest.ref)
        md_rows = [(r[0], *(f"{v:.4f}" for v in r[1:])) for r in rows]
        write_markdown_table(out / "comparison.md", _COMPARE_HEADER, md_rows,
                             manifest_ref=manifest.ref, title="Predictor comparison")
        if args.format == "svg":
            grid = sigma_grid()
            svg_line_plot(out / "comparison.svg",
                          [(name, grid, curve.values) for name, curve in curves_by_name.items()],
                          title="AUC@Laσ by predictor",
                          x_label="permitted latency σ (frame periods)",
                          y_label="AUC", manifest_ref=manifest.ref)
    write_manifest(replace(manifest, stage_seconds=timer.stages), out)
    for row in rows:
        print(f"{row[0]}: AUC@La0={row[1]:.4f} DP@La0={row[2]:.4f} "
              f"mAUC={row[3]:.4f} mDP={row[4]:.4f} extra={row[5] * 1e3:.2f} ms")
    return EXIT_OK


def cmd_horizon(args) -> int:
    seed = _seed(args)
    sequences = _load_sequences(args.sequences, framerate=args.framerate)
    tracker_cfg = Config.load(args.tracker)
    tracker = tracker_from_config(tracker_cfg)
    timer = StageTimer()
    manifest = build_manifest("horizon", seed,
                              {"tracker": tracker_cfg.values, "trials": args.trials},
                              {"tracker": args.tracker, **_sequence_inputs(args.sequences)})
    out = _out_dir(args)
    with timer.stage("pre_run"):
        def one(seq):
            return pick_horizon_n(seq, _bind_tracker(tracker, seq.name), trials=args.trials,
                                  seed=derive_seed(seed, "horizon", seq.name))
        gaps = _map_ordered(one, sequences, args.workers)
    per_seq = {seq.name: gap for seq, gap in zip(sequences, gaps)}
    overall = max(gaps)
    with timer.stage("write"):
        write_json(out / "horizon.json",
                   {"per_sequence": per_seq, "horizon_n": overall, "trials": args.trials},
                   manifest_ref=manifest.ref)
    write_manifest(replace(manifest, stage_seconds=timer.stages), out)
    print(f"horizon N = {overall}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latetrack",
        description="Latency-aware tracking: simulate streams, score them, train predictors.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, default=1, help="parallel workers")
    common.add_argument("--format", choices=["csv", "json", "md", "svg"], default="csv",
                        help="extra report format (CSV/JSON are always written)")
    common.add_argument("--framerate", type=float, default=30.0,
                        help="capture rate kappa in frames per second")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic sequences")
    p.add_argument("spec", help="synthetic spec config file")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("simulate", parents=[common], help="run the latency simulator")
    p.add_argument("--sequences", required=True, help="sequence file or directory")
    p.add_argument("--tracker", required=True, help="tracker config file")
    p.add_argument("--predictor", help="predictor config file")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="score run logs over the sigma grid")
    p.add_argument("--sequences", required=True)
    p.add_argument("--logs", required=True, help="log file or directory of <name>.log.csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("train", parents=[common], help="train the motion network")
    p.add_argument("--corpus", required=True, help="directory of training sequences")
    p.add_argument("--config", help="training config file")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compare", parents=[common], help="compare predictors end to end")
    p.add_argument("--sequences", required=True)
    p.add_argument("--tracker", required=True)
    p.add_argument("--predictors", required=True,
                   help="comma list: none,zero,kf,kf_learned:<file>,pm:<checkpoint>")
    p.add_argument("--horizon", type=int, help="prediction horizon (default: from pre-runs)")
    p.add_argument("--pred-latency", type=float, default=0.005,
                   help="constant predictor latency in seconds")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("horizon", parents=[common], help="pick the horizon from pre-runs")
    p.add_argument("--sequences", required=True)
    p.add_argument("--tracker", required=True)
    p.add_argument("--trials", type=int, default=3)
    p.set_defaults(fn=cmd_horizon)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, ReplayExhaustedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
