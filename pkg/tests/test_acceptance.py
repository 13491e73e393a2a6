"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  The heavier criteria
share a single trained model via module-scoped fixtures.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from seqsynth import autodiff as ad
from seqsynth.classifier import ClassifierConfig
from seqsynth.data import (
    EventSequence,
    EventVocabulary,
    canonicalize,
    canonicalize_sequences,
    pad_batch,
)
from seqsynth.decoder import mc_compensator
from seqsynth.generate import GenerationConfig, synthesize_dataset, synthesize_one
from seqsynth.metrics import (
    dataset_attack,
    dcr,
    ml_inference_score,
    roc_auc,
    utility_score,
)
from seqsynth.model import ModelConfig, SequenceVAE
from seqsynth.oracle import (
    ExpHawkesParams,
    default_scenario,
    exact_compensator,
    poisson_mle_baseline,
    simulate_dataset,
    simulate_thinning,
    time_rescaled_intervals,
)
from seqsynth.training import TrainConfig, evaluate_log_likelihood, fit, total_loss

VOCAB3 = EventVocabulary(names=["a", "b", "c"])


def _report(criterion: int, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def fixture_data():
    params = default_scenario()
    seqs = canonicalize_sequences(simulate_dataset(params, 250, seed=101))
    return {"params": params, "train": seqs[:200], "test": seqs[200:],
            "max_len": max(len(s) for s in seqs) + 1}


@pytest.fixture(scope="module")
def trained_model(fixture_data):
    train = fixture_data["train"]
    mc = ModelConfig(n_types=3, max_len=fixture_data["max_len"], d=32, d_z=8,
                     n_layers=2, n_heads=2, d_ff=64)
    tc = TrainConfig(epochs=60, batch_size=32, kl_weight=0.02, n_mc=20, seed=0, lr=1e-3)
    t0 = time.time()
    res = fit(train[:170], train[170:], VOCAB3, mc, tc)
    return {"model": res.model, "train_seconds": time.time() - t0, "epochs": tc.epochs}


def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(0)
    t, k = canonicalize(np.sort(rng.uniform(0, 10, 5)), rng.integers(0, 3, 5))
    seq = EventSequence("s", t, k, 1)
    cfg = ModelConfig(n_types=3, max_len=6, d=8, d_z=4, n_layers=1, n_heads=2, d_ff=16)
    model = SequenceVAE(cfg, VOCAB3, seed=0)
    batch = pad_batch([seq], 6, VOCAB3)
    tc = TrainConfig(n_mc=7, seed=0)
    eps = np.random.default_rng(2).standard_normal((1, 6, 4))
    u = np.random.default_rng(3).uniform(size=(1, 4, 7))
    fn = lambda: total_loss(batch, model, tc, eps=eps, u_frac=u)[0]
    t0 = time.time()
    report = ad.finite_diff_check(fn, model.named_params(), h=1e-4)
    elapsed = time.time() - t0
    ok = report.max_rel_err < 1e-4 and elapsed < 30.0
    _report(1, ok, f"max rel err {report.max_rel_err:.2e} (<1e-4), {elapsed:.1f}s (<30s)")


def test_criterion_2_mc_likelihood_fidelity(fixture_data):
    params = fixture_data["params"]

    def total_intensity_fn(seq):
        def f(ts):
            ts = np.asarray(ts)
            lam = np.tile(params.mu.sum(), len(ts))
            for tj, kj in zip(seq.times, seq.types):
                live = ts > tj
                lam[live] += (params.A[:, kj][:, None]
                              * np.exp(-params.delta[:, kj][:, None] * (ts[live] - tj))).sum(axis=0)
            return lam
        return f

    checked = 0
    worst = 0.0
    i = 0
    while checked < 20:
        seq = simulate_thinning(params, np.random.default_rng([401, i]))
        i += 1
        if len(seq) < 3:
            continue
        est = mc_compensator(total_intensity_fn(seq), seq.times, n_mc=1000,
                             rng=np.random.default_rng([402, i]))
        ref = exact_compensator(params, seq.times, seq.types,
                                float(seq.times[0]), float(seq.times[-1]))
        worst = max(worst, abs(est - ref) / ref)
        checked += 1

    # constant-intensity exactness
    const = mc_compensator(lambda ts: np.full(len(np.atleast_1d(ts)), 0.7),
                           np.array([1.0, 2.5, 4.0]), n_mc=1000,
                           rng=np.random.default_rng(0))
    const_err = abs(const - 0.7 * 3.0)
    ok = worst < 0.01 and const_err < 1e-12
    _report(2, ok, f"20 sequences, worst rel err {worst:.4f} (<0.01); "
                   f"constant case err {const_err:.2e} (<1e-12)")


def test_criterion_3_learning_signal(fixture_data, trained_model):
    test = fixture_data["test"]
    base = poisson_mle_baseline(fixture_data["train"], 3)
    rate_sum = float(base.rates.sum())
    n_events = sum(len(s) for s in test)
    poisson_ll = sum(len(s) * np.log(rate_sum) - rate_sum * s.span for s in test)
    model_eval = evaluate_log_likelihood(trained_model["model"], test, n_mc=100, seed=0)
    ok = (model_eval["per_event_ll"] > poisson_ll / n_events
          and trained_model["train_seconds"] < 600.0
          and trained_model["epochs"] <= 100)
    _report(3, ok, f"model per-event LL {model_eval['per_event_ll']:.4f} > "
                   f"poisson {poisson_ll / n_events:.4f}; "
                   f"{trained_model['epochs']} epochs in {trained_model['train_seconds']:.0f}s (<600s)")


def test_criterion_4_reconstruction_sanity(fixture_data):
    seqs = canonicalize_sequences(simulate_dataset(fixture_data["params"], 8, seed=77))
    max_len = max(len(s) for s in seqs) + 1
    mc = ModelConfig(n_types=3, max_len=max_len, d=32, d_z=8, n_layers=2,
                     n_heads=2, d_ff=64)
    tc = TrainConfig(epochs=800, batch_size=8, kl_weight=0.0, n_mc=10, seed=0,
                     lr=1e-3, var_multiplier=0.0)
    res = fit(seqs, [], VOCAB3, mc, tc)
    cfg = GenerationConfig(var_multiplier=0.0, type_sampling="argmax", seed=0)
    total_matches = 0
    total_events = 0
    mae_ok = True
    details = []
    for s in seqs:
        gen, _ = synthesize_one(s, res.model, cfg, np.random.default_rng(0))
        n = min(len(gen), len(s))
        total_matches += sum(int(gen.types[j] == s.types[j]) for j in range(n))
        total_events += len(s)
        mae = float(np.mean([abs(gen.times[j] - s.times[j]) for j in range(n)])) if n else np.inf
        frac = mae / s.span
        details.append(frac)
        mae_ok = mae_ok and frac < 0.05
    accuracy = total_matches / total_events
    ok = accuracy >= 0.95 and mae_ok
    _report(4, ok, f"type accuracy {accuracy:.3f} (>=0.95); "
                   f"worst time MAE {max(details):.3f} of span (<0.05)")


def test_criterion_5_events_known_contract(fixture_data, trained_model):
    model = trained_model["model"]
    train = fixture_data["train"]
    checked = 0
    violations = 0
    for seed in range(5):
        cfg = GenerationConfig(mode="events_known", var_multiplier=2.0, seed=seed)
        synth, _ = synthesize_dataset(train, model, cfg)
        for src, gen in zip(train, synth):
            checked += 1
            if not set(gen.types.tolist()) <= set(src.types.tolist()):
                violations += 1
    ok = checked >= 1000 and violations == 0
    _report(5, ok, f"{checked} generations, {violations} support violations (need 0)")


def test_criterion_6_metric_oracles(fixture_data):
    # roc_auc against the brute-force pairwise value
    auc = roc_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8])
    auc_ok = abs(auc - 0.75) < 1e-12

    reals = [EventSequence(f"r{i}", np.array([1.0 + i, 2.0 + i]), np.array([0, 1]), 0)
             for i in range(5)]
    copies = [EventSequence(f"s{i}", np.array([1.0 + i, 2.0 + i]), np.array([0, 1]), 0)
              for i in range(5)]
    far = [EventSequence(f"f{i}", np.array([900.0 + i, 1500.0 + i]), np.array([0, 1]), 0)
           for i in range(5)]
    dcr_ok = float(dcr(copies, reals, 2).mean()) == 0.0
    attack_copy = dataset_attack(reals, copies, 2)
    attack_far = dataset_attack(reals, far, 2)
    attack_ok = attack_copy == 0.0 and attack_far == 1.0

    params = fixture_data["params"]
    aucs = []
    for seed in range(5):
        a = canonicalize_sequences(simulate_dataset(params, 200, seed=500 + seed))
        b = canonicalize_sequences(simulate_dataset(params, 200, seed=900 + seed))
        cfg = ClassifierConfig(epochs=8, hidden_size=32, embedding_size=32,
                               batch_size=32, seed=seed)
        val, _ = ml_inference_score(a, b, 3, [cfg], seed=seed, n_boot=2)
        aucs.append(val)
    mli_mean = float(np.mean(aucs))
    mli_ok = 0.45 <= mli_mean <= 0.60

    ok = auc_ok and dcr_ok and attack_ok and mli_ok
    _report(6, ok, f"roc_auc {auc:.12f} (0.75); copy DCR 0: {dcr_ok}; "
                   f"attack copy {attack_copy} / far {attack_far}; "
                   f"same-process ml_inference mean {mli_mean:.3f} in [0.45,0.60]")


def test_criterion_7_tradeoff_direction(fixture_data, trained_model):
    model = trained_model["model"]
    train, test = fixture_data["train"], fixture_data["test"]
    mults = [0.1, 0.5, 1.0, 2.0, 4.0]
    t0 = time.time()
    rho_dcr, rho_util = [], []
    for seed in range(5):
        clf_cfg = ClassifierConfig(epochs=10, hidden_size=32, embedding_size=32,
                                   batch_size=32, seed=seed)
        utils, dcrs = [], []
        for m in mults:
            synth, _ = synthesize_dataset(train, model,
                                          GenerationConfig(var_multiplier=m, seed=100 + seed))
            auc, _ = utility_score(synth, test, 3, [clf_cfg], seed=seed, n_boot=2)
            utils.append(auc)
            dcrs.append(float(dcr(synth, train, 3).mean()))
        rho_dcr.append(stats.spearmanr(mults, dcrs).statistic)
        rho_util.append(stats.spearmanr(mults, utils).statistic)
    elapsed = time.time() - t0
    mean_d, mean_u = float(np.mean(rho_dcr)), float(np.mean(rho_util))
    ok = mean_d > 0 and mean_u <= 0 and elapsed < 1800.0
    _report(7, ok, f"spearman(mult, dcr) {mean_d:+.3f} (>0); "
                   f"spearman(mult, utility) {mean_u:+.3f} (<=0); {elapsed:.0f}s (<1800s)")


def _run_cli(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "seqsynth.cli"] + args,
                          capture_output=True, text=True, cwd=cwd)
    assert proc.returncode == 0, f"{args}: {proc.stderr}"
    return proc


def _tree_bytes(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def _manifests_without_timestamps(root: Path) -> dict:
    out = {}
    for m in sorted(root.rglob("manifest.json")):
        d = json.loads(m.read_text())
        d.pop("timestamps")
        out[str(m.relative_to(root))] = d
    return out


def test_criterion_8_cli_determinism(tmp_path):
    scenario = tmp_path / "scenario.toml"
    scenario.write_text(
        '[process]\nmu = [0.4, 0.25]\nexcitation = [[0.1, 0.05], [0.0, 0.1]]\n'
        'decay = 1.0\nhorizon = 10.0\nevent_names = ["alpha", "beta"]\n\n'
        '[dataset]\nn_train = 16\nn_test = 6\nseed = 5\n'
    )
    config = tmp_path / "config.toml"
    config.write_text(
        "[model]\nd = 16\nd_z = 4\nn_layers = 1\nn_heads = 2\nd_ff = 32\n\n"
        "[train]\nepochs = 2\nbatch_size = 8\nn_mc = 4\nkl_weight = 0.1\nseed = 1\n\n"
        "[classifier]\nepochs = 2\nhidden_size = 8\nembedding_size = 8\n"
    )

    root = tmp_path / "a"

    def pipeline():
        root.mkdir(exist_ok=True)
        _run_cli(["simulate", "--scenario", str(scenario), "--out", str(root / "data")], tmp_path)
        _run_cli(["train", "--data", str(root / "data"), "--config", str(config),
                  "--out", str(root / "run")], tmp_path)
        _run_cli(["generate", "--checkpoint", str(root / "run" / "checkpoint.ckpt"),
                  "--data", str(root / "data"), "--out", str(root / "syn"),
                  "--var-multiplier", "1.0", "--seed", "3"], tmp_path)
        _run_cli(["evaluate", "--real", str(root / "data"), "--synthetic", str(root / "syn"),
                  "--config", str(config), "--out", str(root / "eval"), "--seed", "0"], tmp_path)
        _run_cli(["sweep", "--checkpoint", str(root / "run" / "checkpoint.ckpt"),
                  "--data", str(root / "data"), "--multipliers", "0.5,2",
                  "--config", str(config), "--out", str(root / "sweep"), "--seed", "0"], tmp_path)

    # identical commands rerun in place must reproduce every data output
    pipeline()
    first_files = _tree_bytes(root)
    first_manifests = _manifests_without_timestamps(root)
    pipeline()
    second_files = _tree_bytes(root)
    second_manifests = _manifests_without_timestamps(root)
    identical = (first_files.keys() == second_files.keys()
                 and all(first_files[k] == second_files[k] for k in first_files))
    manifests_ok = first_manifests == second_manifests
    ok = identical and manifests_ok
    _report(8, ok, f"{len(first_files)} data outputs byte-identical across reruns; "
                   f"manifests equal modulo timestamps: {manifests_ok}")


def test_criterion_9_thinning_correctness():
    # Poisson reduction: A = 0, total rate 2 on [0, 10] -> mean count 20
    pois = ExpHawkesParams(mu=np.array([1.2, 0.8]), A=np.zeros((2, 2)),
                           delta=np.ones((2, 2)), T=10.0)
    counts = [len(simulate_thinning(pois, np.random.default_rng([123, i])))
              for i in range(1000)]
    mean = float(np.mean(counts))
    count_ok = abs(mean - 20.0) < 3 * np.sqrt(20.0 / 1000)

    params = default_scenario()
    seqs = [simulate_thinning(params, np.random.default_rng([9, i])) for i in range(500)]
    xs = time_rescaled_intervals(params, seqs, max_intervals_per_seq=8)
    pvalue = float(stats.kstest(xs, "expon").pvalue)
    ks_ok = pvalue > 0.01
    ok = count_ok and ks_ok
    _report(9, ok, f"poisson mean count {mean:.2f} (target 20); "
                   f"KS p-value {pvalue:.3f} (>0.01) on {len(xs)} rescaled intervals")
