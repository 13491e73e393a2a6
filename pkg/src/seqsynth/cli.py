"""Command-line entry point: simulate | train | generate | evaluate | sweep.

Every command writes into its own --out directory: the data products plus
exactly one manifest.json.  All randomness is seeded, so rerunning a
command with the same arguments reproduces every data output byte for
byte; wall-clock timestamps live only inside the manifest.

Exit codes: 0 success, 2 invalid input, 3 training divergence (last good
checkpoint retained), 4 checkpoint version mismatch, 5 vocabulary
mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

THREADS_ENV = "SEQSYNTH_THREADS"


def _configure_threads():
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


_configure_threads()

import numpy as np  # noqa: E402  (thread caps must be set first)

from . import __version__  # noqa: E402
from .errors import (  # noqa: E402
    CheckpointVersionError,
    SeqSynthError,
    TrainingDivergedError,
    VocabularyMismatchError,
)

EXIT_INVALID_INPUT = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT_VERSION = 4
EXIT_VOCAB_MISMATCH = 5


# -- manifest -----------------------------------------------------------------


class Manifest:
    def __init__(self, command: str, out_dir: Path, seed, config_path, inputs: dict):
        self.data = {
            "tool_version": __version__,
            "command": command,
            "seed": seed,
            "config_path": str(config_path) if config_path else None,
            "inputs": {k: str(v) for k, v in inputs.items()},
            "outputs": [],
            "checkpoint_hash": None,
            "timestamps": {"started": datetime.now(timezone.utc).isoformat()},
        }
        self.out_dir = Path(out_dir)

    def add_output(self, path):
        self.data["outputs"].append(Path(path).name)

    def finish(self):
        self.data["outputs"] = sorted(set(self.data["outputs"]))
        self.data["timestamps"]["finished"] = datetime.now(timezone.utc).isoformat()
        with open(self.out_dir / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
            f.write("\n")


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_toml(path) -> dict:
    from .errors import SchemaError

    path = Path(path)
    if not path.exists():
        raise SchemaError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise SchemaError(f"invalid TOML in {path}: {e}") from None


# -- scenario ------------------------------------------------------------------


def _scenario_params(doc: dict):
    from .data import EventVocabulary
    from .errors import ConfigError
    from .oracle import ExpHawkesParams

    proc = doc.get("process", {})
    ds = doc.get("dataset", {})
    mu = np.asarray(proc["mu"], dtype=np.float64)
    K = len(mu)
    A = np.asarray(proc["excitation"], dtype=np.float64)
    decay = proc.get("decay", 1.0)
    delta = np.full((K, K), float(decay)) if np.isscalar(decay) else np.asarray(decay, float)
    params = ExpHawkesParams(mu=mu, A=A, delta=delta, T=float(proc["horizon"]))
    names = proc.get("event_names", [f"type{k:03d}" for k in range(K)])
    if list(names) != sorted(names):
        raise ConfigError("event_names must be in lexicographic order "
                          "(CSV round-trips rebuild indices lexicographically)")
    if len(names) != K:
        raise ConfigError(f"need {K} event names, got {len(names)}")
    vocab = EventVocabulary(names=list(names))
    return params, vocab, int(ds.get("n_train", 200)), int(ds.get("n_test", 50)), int(ds.get("seed", 0))


def default_scenario_path() -> Path:
    return Path(__file__).parent / "scenarios" / "default.toml"


# -- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .data import write_events_csv, write_labels_csv
    from .oracle import simulate_dataset

    scenario_path = Path(args.scenario) if args.scenario else default_scenario_path()
    doc = _load_toml(scenario_path)
    params, vocab, n_train, n_test, file_seed = _scenario_params(doc)
    seed = args.seed if args.seed is not None else file_seed
    out = _prepare_out(args.out)
    manifest = Manifest("simulate", out, seed, scenario_path, {"scenario": scenario_path})

    seqs = simulate_dataset(params, n_train + n_test, seed=seed)
    train, test = seqs[:n_train], seqs[n_train:]
    for split_name, subset in (("train", train), ("test", test)):
        ev, lb = out / f"{split_name}_events.csv", out / f"{split_name}_labels.csv"
        write_events_csv(subset, vocab, ev)
        write_labels_csv(subset, lb)
        manifest.add_output(ev)
        manifest.add_output(lb)
    manifest.finish()
    print(f"simulated {len(train)}+{len(test)} subjects -> {out}")
    return 0


def _load_split(data_dir: Path, split: str, vocab=None):
    from .data import parse_events

    return parse_events(data_dir / f"{split}_events.csv",
                        data_dir / f"{split}_labels.csv", vocab=vocab)


def _train_configs(doc: dict, n_types: int, max_len_data: int):
    from .model import ModelConfig
    from .training import TrainConfig

    m = doc.get("model", {})
    t = doc.get("train", {})
    max_len = int(m.get("max_len", 0))
    if max_len <= 0:
        # headroom so slightly longer held-out subjects still fit
        max_len = int(1.5 * (max_len_data + 1)) + 1
    model_cfg = ModelConfig(
        n_types=n_types, max_len=max_len,
        d=int(m.get("d", 64)), d_z=int(m.get("d_z", 32)),
        n_layers=int(m.get("n_layers", 2)), n_heads=int(m.get("n_heads", 4)),
        d_ff=int(m.get("d_ff", 128)), dropout=float(m.get("dropout", 0.0)),
    )
    train_cfg = TrainConfig(
        lr=float(t.get("lr", 1e-3)), epochs=int(t.get("epochs", 50)),
        batch_size=int(t.get("batch_size", 32)), kl_weight=float(t.get("kl_weight", 1.0)),
        n_mc=int(t.get("n_mc", 20)), seed=int(t.get("seed", 0)),
        grad_clip=float(t.get("grad_clip", 5.0)),
        time_weight=float(t.get("time_weight", 1.0)),
        type_weight=float(t.get("type_weight", 1.0)),
        length_weight=float(t.get("length_weight", 1.0)),
        var_multiplier=float(t.get("var_multiplier", 1.0)),
    )
    val_frac = float(t.get("val_frac", 0.15))
    return model_cfg, train_cfg, val_frac


def cmd_train(args) -> int:
    from .data import split as split_data
    from .model import SequenceVAE, checkpoint_sha256
    from .training import fit, write_loss_curves

    data_dir = Path(args.data)
    doc = _load_toml(args.config) if args.config else {}
    res = _load_split(data_dir, "train")
    seqs, vocab = res.sequences, res.vocabulary
    max_len_data = max(len(s) for s in seqs)
    model_cfg, train_cfg, val_frac = _train_configs(doc, vocab.size, max_len_data)
    if args.seed is not None:
        train_cfg.seed = args.seed
    out = _prepare_out(args.out)
    manifest = Manifest("train", out, train_cfg.seed, args.config, {"data": data_dir})

    train_seqs, val_seqs = split_data(seqs, 1.0 - val_frac, seed=train_cfg.seed)
    ckpt_path = out / "checkpoint.ckpt"
    extra = {"train_config": train_cfg.to_dict(), "val_frac": val_frac}
    try:
        result = fit(train_seqs, val_seqs, vocab, model_cfg, train_cfg)
    except TrainingDivergedError as e:
        if e.last_good_state is not None:
            model = SequenceVAE(model_cfg, vocab, seed=train_cfg.seed)
            model.load_state_arrays(e.last_good_state)
            model.save(ckpt_path, extra={**extra, "diverged": True})
            print(f"divergence: last good checkpoint written to {ckpt_path}", file=sys.stderr)
        raise
    result.model.save(ckpt_path, extra={**extra, "best_epoch": result.best_epoch,
                                        "best_val": result.best_val})
    curves = out / "loss_curves.csv"
    write_loss_curves(result.history, curves)
    manifest.add_output(ckpt_path)
    manifest.add_output(curves)
    manifest.data["checkpoint_hash"] = checkpoint_sha256(ckpt_path)
    manifest.finish()
    print(f"trained {train_cfg.epochs} epochs; best val {result.best_val:.4f} "
          f"at epoch {result.best_epoch} -> {ckpt_path}")
    return 0


def _write_synthetic(out: Path, synthetic, vocab, meta: dict, manifest: Manifest):
    from .data import write_events_csv, write_labels_csv

    ev, lb = out / "synthetic_events.csv", out / "synthetic_labels.csv"
    write_events_csv(synthetic, vocab, ev)
    write_labels_csv(synthetic, lb)
    mj = out / "generation_meta.json"
    with open(mj, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    for p in (ev, lb, mj):
        manifest.add_output(p)


def cmd_generate(args) -> int:
    from .generate import GenerationConfig, synthesize_dataset
    from .model import SequenceVAE, checkpoint_sha256

    model, _ = SequenceVAE.load(args.checkpoint)
    data_dir = Path(args.data)
    res = _load_split(data_dir, "train", vocab=model.vocab)
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else 0
    manifest = Manifest("generate", out, seed, None,
                        {"checkpoint": args.checkpoint, "data": data_dir})
    manifest.data["checkpoint_hash"] = checkpoint_sha256(args.checkpoint)

    cfg = GenerationConfig(
        mode="events_known" if args.events_known else "events_unknown",
        var_multiplier=args.var_multiplier, seed=seed,
    )
    synthetic, meta = synthesize_dataset(res.sequences, model, cfg)
    if cfg.mode == "events_known":
        by_id = {s.subject_id: s for s in res.sequences}
        for g in synthetic:
            allowed = set(by_id[g.subject_id].types.tolist())
            if not set(g.types.tolist()) <= allowed:
                raise SeqSynthError(f"events-known violation for {g.subject_id}")
    _write_synthetic(out, synthetic, model.vocab, meta, manifest)
    manifest.finish()
    print(f"generated {len(synthetic)} subjects (mode={cfg.mode}, "
          f"multiplier={cfg.var_multiplier}) -> {out}")
    return 0


def _classifier_configs(doc: dict, seed: int):
    from .classifier import ClassifierConfig

    c = doc.get("classifier", {})
    return [ClassifierConfig(
        embedding_size=int(c.get("embedding_size", 32)),
        hidden_size=int(c.get("hidden_size", 32)),
        n_layers=int(c.get("n_layers", 1)),
        lr=float(c.get("lr", 1e-3)),
        epochs=int(c.get("epochs", 12)),
        batch_size=int(c.get("batch_size", 32)),
        seed=seed,
    )]


def _evaluate_dirs(real_dir: Path, synthetic_dir: Path, seed: int, doc: dict):
    from .data import parse_events
    from .metrics import evaluate_all

    real_train = _load_split(real_dir, "train")
    vocab = real_train.vocabulary
    real_test = _load_split(real_dir, "test", vocab=vocab)
    synth = parse_events(synthetic_dir / "synthetic_events.csv",
                         synthetic_dir / "synthetic_labels.csv", vocab=vocab)
    meta_path = synthetic_dir / "generation_meta.json"
    gen_meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    report = evaluate_all(
        real_train.sequences, real_test.sequences, synth.sequences, vocab.size,
        clf_configs=_classifier_configs(doc, seed), seed=seed,
        metadata={"var_multiplier": gen_meta.get("var_multiplier"),
                  "mode": gen_meta.get("mode"), "seed": seed},
    )
    return report, gen_meta


def _validate_report(report_dict: dict):
    import jsonschema

    schema = json.loads((Path(__file__).parent / "report_schema.json").read_text())
    jsonschema.validate(report_dict, schema)


def cmd_evaluate(args) -> int:
    import csv

    doc = _load_toml(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(args.out)
    manifest = Manifest("evaluate", out, seed, args.config,
                        {"real": args.real, "synthetic": args.synthetic})
    report, gen_meta = _evaluate_dirs(Path(args.real), Path(args.synthetic), seed, doc)
    report_dict = report.to_dict()
    _validate_report(report_dict)
    rp = out / "report.json"
    rp.write_text(report.to_json() + "\n", encoding="utf-8")
    row_path = out / "report_row.csv"
    with open(row_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        from .metrics import MetricReport

        w.writerow(MetricReport.CSV_HEADER)
        w.writerow(report.csv_row(gen_meta.get("var_multiplier", "")))
    manifest.add_output(rp)
    manifest.add_output(row_path)
    manifest.finish()
    print(f"utility={report.utility_rocauc:.3f}±{report.utility_std:.3f} "
          f"ml_inference={report.ml_inference:.3f} dcr_mean={report.dcr_mean:.3f} "
          f"attack={report.dataset_attack:.2f} -> {rp}")
    return 0


def _sweep_point(payload):
    """Worker for one multiplier (kept module-level so process pools can
    pickle it)."""
    (ckpt, data_dir, out_dir, mult, seed, doc) = payload
    from .generate import GenerationConfig, synthesize_dataset
    from .model import SequenceVAE

    model, _ = SequenceVAE.load(ckpt)
    res = _load_split(Path(data_dir), "train", vocab=model.vocab)
    point_dir = _prepare_out(Path(out_dir) / f"multiplier_{mult:g}")
    manifest = Manifest("generate", point_dir, seed, None,
                        {"checkpoint": ckpt, "data": data_dir})
    cfg = GenerationConfig(var_multiplier=mult, seed=seed)
    synthetic, meta = synthesize_dataset(res.sequences, model, cfg)
    _write_synthetic(point_dir, synthetic, model.vocab, meta, manifest)
    manifest.finish()
    report, _ = _evaluate_dirs(Path(data_dir), point_dir, seed, doc)
    (point_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report.csv_row(mult)


def cmd_sweep(args) -> int:
    import csv

    from .errors import ConfigError

    multipliers = [float(x) for x in args.multipliers.split(",") if x.strip() != ""]
    if len(multipliers) < 2:
        raise ConfigError("sweep needs at least 2 multipliers")
    doc = _load_toml(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(args.out)
    manifest = Manifest("sweep", out, seed, args.config,
                        {"checkpoint": args.checkpoint, "data": args.data})
    payloads = [(args.checkpoint, str(args.data), str(out), m, seed, doc)
                for m in multipliers]
    if args.parallel and args.parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_point_safe, payloads))
    else:
        results = [_sweep_point_safe(p) for p in payloads]
    rows = [row for row, err in results if err is None]
    failures = [(m, err) for m, (_, err) in zip(multipliers, results) if err is not None]

    sweep_csv = out / "sweep.csv"
    from .metrics import MetricReport

    with open(sweep_csv, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(MetricReport.CSV_HEADER)
        for row in rows:
            w.writerow(row)
    manifest.add_output(sweep_csv)
    if rows:
        svg = out / "sweep.svg"
        _render_sweep_svg(rows, svg)
        manifest.add_output(svg)
    manifest.finish()
    for m, err in failures:
        print(f"multiplier {m} failed: {err}", file=sys.stderr)
    print(f"swept {len(rows)}/{len(multipliers)} multipliers -> {sweep_csv}")
    return 0 if not failures else EXIT_INVALID_INPUT


def _sweep_point_safe(payload):
    try:
        return _sweep_point(payload), None
    except Exception as e:  # partial CSV still written by the caller
        return None, f"{type(e).__name__}: {e}"


def _render_sweep_svg(rows, path):
    """Two-axis curve: utility AUC (left, blue) and mean DCR (right, red)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "seqsynth"
    rows = sorted(rows, key=lambda r: r[0])
    mult = [r[0] for r in rows]
    utility = [r[1] for r in rows]
    dcr_mean = [r[4] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(mult, utility, "o-", color="tab:blue", label="utility ROCAUC")
    ax1.set_xlabel("variance multiplier")
    ax1.set_ylabel("utility ROCAUC", color="tab:blue")
    ax1.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(mult, dcr_mean, "s--", color="tab:red", label="mean DCR")
    ax2.set_ylabel("mean distance to closest record", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqsynth",
                                description="Hawkes sequence synthesis and auditing")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate ground-truth datasets")
    s.add_argument("--scenario", help="scenario TOML (default: bundled)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_simulate)

    t = sub.add_parser("train", help="train the sequence model")
    t.add_argument("--data", required=True, help="dir with train_events/labels CSVs")
    t.add_argument("--config", help="model/train TOML")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("generate", help="synthesize a dataset from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True, help="dir with source train CSVs")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--var-multiplier", type=float, default=1.0)
    g.add_argument("--events-known", action="store_true")
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("evaluate", help="audit synthetic data against real data")
    e.add_argument("--real", required=True, help="dir with train/test CSVs")
    e.add_argument("--synthetic", required=True, help="dir with synthetic CSVs")
    e.add_argument("--config", help="classifier TOML")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.set_defaults(fn=cmd_evaluate)

    w = sub.add_parser("sweep", help="fidelity/privacy tradeoff across multipliers")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--data", required=True)
    w.add_argument("--multipliers", required=True, help="comma-separated, e.g. 0.1,1,4")
    w.add_argument("--config", help="classifier TOML")
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int)
    w.add_argument("--parallel", type=int,
                   default=int(os.environ.get(THREADS_ENV, "1")))
    w.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VocabularyMismatchError as e:
        print(f"vocabulary mismatch: {e}", file=sys.stderr)
        return EXIT_VOCAB_MISMATCH
    except CheckpointVersionError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT_VERSION
    except TrainingDivergedError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except SeqSynthError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
