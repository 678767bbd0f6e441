"""Acceptance criteria. Each test prints one ``[PASS]``/``[FAIL]`` line at its stated tolerance.

The benchmark criteria (5, 6, 7) share one 5-seed ablation on the default
synthetic config, run once per session (about 2.5 minutes single-threaded).
"""
import csv
import math
import time
import zlib

import numpy as np
import pytest

from mejem import autodiff as ad
from mejem.autodiff import Tensor
from mejem.cli import main
from mejem.config import ExperimentConfig
from mejem.data import fit_normalizer
from mejem.losses import Flags, LossWeights, MarginConfig, cross_entropy, margin_loss, mejem_objective
from mejem.metrics import auroc, fpr_at_tpr
from mejem.model import forward, init_mlp
from mejem.runner import ablate, load_datasets, train
from mejem.sam import OptimizerState, SamConfig, lr_at, sam_perturbation, sam_step
from mejem.scoring import energy_score, softmax_score
from mejem.sgld import ReplayBuffer, SgldConfig, sample_negatives, sgld_step

from gradcheck import central_diff, check_grad, rel_error

SEEDS = [0, 1, 2, 3, 4]
TIE = 0.01


def _rng(tag):
    return np.random.default_rng(zlib.crc32(tag.encode()))


# --- 1. gradient suite ------------------------------------------------------------------

def _off_kink(x, c=0.0):
    x = x.copy()
    x[np.abs(x - c) < 1e-3] += 1e-2
    return x


GRAD_CASES = {
    "matmul": (lambda a, b: ad.sum(ad.matmul(a, b)), [(3, 4), (4, 2)], None),
    "add": (lambda a, b: ad.sum(ad.square(ad.add(a, b))), [(3, 4), (4,)], None),
    "sub": (lambda a, b: ad.sum(ad.square(ad.sub(a, b))), [(3, 4), (3, 4)], None),
    "scale": (lambda a: ad.sum(ad.square(ad.scale(a, 2.5))), [(6,)], None),
    "mul": (lambda a, b: ad.sum(ad.mul(a, b)), [(3, 4), (3, 4)], None),
    "square": (lambda a: ad.sum(ad.square(a)), [(2, 5)], None),
    "relu": (lambda a: ad.sum(ad.square(ad.relu(a))), [(4, 3)], 0.0),
    "hinge": (lambda a: ad.sum(ad.square(ad.hinge(a, -0.2))), [(8,)], -0.2),
    "logsumexp": (lambda a: ad.sum(ad.square(ad.logsumexp(a))), [(3, 5)], None),
    "gather": (lambda a: ad.sum(ad.square(ad.gather(a, [1, 0, 3]))), [(3, 4)], None),
    "mean": (lambda a: ad.square(ad.mean(a)), [(2, 3)], None),
    "sum": (lambda a: ad.square(ad.sum(a)), [(2, 3)], None),
}


def _param_fd_error(params, build):
    params.zero_grad()
    build(params).backward()
    frozen = params.frozen()
    f = lambda: build(frozen).item()  # noqa: E731
    return max(rel_error(p.grad, central_diff(f, p.data)) for p in params.parameters())


def test_criterion_1_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst_prim = 0.0
    for name, (build, shapes, kink) in GRAD_CASES.items():
        rng = _rng(name)
        for _ in range(10):
            arrays = [rng.normal(size=s) for s in shapes]
            if kink is not None:
                arrays = [_off_kink(a, kink) for a in arrays]
            worst_prim = max(worst_prim, check_grad(build, *arrays))

    rng = _rng("losses")
    x, y = rng.normal(size=(8, 2)), rng.integers(0, 3, size=8)
    xa, xn = rng.normal(3, 1, size=(8, 2)), rng.uniform(-2, 2, size=(8, 2))
    margin = MarginConfig(-1.0, -1.0)  # near init energies, so both hinge branches are active
    params = init_mlp([2, 8, 3], 0)
    worst_loss = max(
        _param_fd_error(params, lambda p: cross_entropy(forward(p, x), y)),
        _param_fd_error(params, lambda p: ad.sub(ad.mean(p.energy(x)), ad.mean(p.energy(xn)))),
        _param_fd_error(params, lambda p: mejem_objective(
            p, x, y, xa, None, LossWeights(0.0, 1.0), margin, Flags(generative=False))[0]),
    )
    worst_full = _param_fd_error(params, lambda p: mejem_objective(
        p, x, y, xa, xn, LossWeights(1.0, 0.5), margin, Flags())[0])
    elapsed = time.perf_counter() - t0
    ok = worst_prim < 1e-4 and worst_loss < 1e-4 and worst_full < 1e-3 and elapsed < 10
    criterion("1 gradient suite", ok,
              f"primitives {worst_prim:.2e} < 1e-4, losses {worst_loss:.2e} < 1e-4, "
              f"full objective {worst_full:.2e} < 1e-3, {elapsed:.1f}s < 10s")


# --- 2. oracle suite -----------------------------------------------------------------

def oracle_scores(row):
    m = max(row)
    lse = m + math.log(math.fsum(math.exp(v - m) for v in row))
    return math.exp(m - lse), lse


def oracle_margin(energies, is_ood, m_in, m_out):
    return math.fsum(max(m_out - e, 0.0) if o else max(e - m_in, 0.0) ** 2
                     for e, o in zip(energies, is_ood))


def oracle_pairwise_auroc(pos, neg):
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def oracle_fpr(pos, neg, tpr):
    ordered = sorted(pos)
    delta = ordered[math.floor((1.0 - tpr) * (len(ordered) - 1))]
    return sum(1 for n in neg if n >= delta) / len(neg)


def test_criterion_2_oracle_suite(criterion):
    t0 = time.perf_counter()
    rng = _rng("oracles")
    n_inst = 100
    worst = {k: 0.0 for k in ("scores", "margin", "sgld", "sam", "auroc", "fpr95")}
    for _ in range(n_inst):
        z = rng.normal(scale=4, size=(int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        soft, energy = softmax_score(z), energy_score(z)
        for i, row in enumerate(z):
            s_ref, e_ref = oracle_scores(list(row))
            worst["scores"] = max(worst["scores"], abs(soft[i] - s_ref), abs(energy[i] - e_ref))

        n = int(rng.integers(1, 12))
        e, ood = rng.normal(-10, 5, size=n), rng.random(n) < 0.5
        m_in, m_out = rng.normal(-10, 3, size=2)
        got = margin_loss(Tensor(e), ood, MarginConfig(m_in, m_out)).item()
        worst["margin"] = max(worst["margin"], abs(got - oracle_margin(e, ood, m_in, m_out)))

        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        x, g, noise = (rng.normal(size=shape) for _ in range(3))
        eps = float(rng.uniform(0, 1))
        out = sgld_step(x, g, eps, noise)
        ref = [[x[i][j] - eps * eps / 2.0 * g[i][j] + eps * noise[i][j] for j in range(shape[1])]
               for i in range(shape[0])]
        worst["sgld"] = max(worst["sgld"], float(np.max(np.abs(out - np.array(ref)))))

        grad = list(rng.normal(size=int(rng.integers(1, 10))) * 10 ** rng.uniform(-3, 3))
        rho = float(rng.uniform(0.01, 1))
        norm = math.sqrt(math.fsum(v * v for v in grad))
        ref = [rho * v / norm for v in grad]
        worst["sam"] = max(worst["sam"], float(np.max(np.abs(sam_perturbation(np.array(grad), rho) - ref))))

        pos = list(rng.integers(-4, 5, size=int(rng.integers(1, 30))).astype(float))
        neg = list(rng.integers(-4, 5, size=int(rng.integers(1, 30))).astype(float))
        worst["auroc"] = max(worst["auroc"], abs(auroc(pos, neg) - oracle_pairwise_auroc(pos, neg)))
        tpr = float(rng.choice([0.95, 0.9, 0.5]))
        worst["fpr95"] = max(worst["fpr95"], abs(fpr_at_tpr(pos, neg, tpr) - oracle_fpr(pos, neg, tpr)))
    elapsed = time.perf_counter() - t0
    tol = {k: 1e-9 for k in worst} | {"auroc": 1e-12}
    ok = all(worst[k] <= tol[k] for k in worst) and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion("2 oracle suite", ok, f"{n_inst} instances each; max abs err {detail}; {elapsed:.1f}s < 30s")


# --- 3. reduction identities ------------------------------------------------------------------

def test_criterion_3a_sam_reduces_to_sgd_bitwise(criterion):
    rng = _rng("sam-sgd")
    x, y = rng.normal(size=(32, 2)), rng.integers(0, 3, size=32)
    sam_params, sgd_params = init_mlp([2, 8, 3], 7), init_mlp([2, 8, 3], 7)
    cfg = SamConfig(rho=0.0, beta=0.0, momentum=0.0, base_lr=0.05, warmup_steps=20, decay_epochs=[])
    state = OptimizerState.for_params(sam_params.parameters())
    for step in range(100):
        sam_step(sam_params.parameters(), lambda: cross_entropy(forward(sam_params, x), y), state, cfg)
        sgd_params.zero_grad()
        cross_entropy(forward(sgd_params, x), y).backward()
        lr = lr_at(step, 0, cfg)
        for p in sgd_params.parameters():
            p.data -= lr * p.grad
    same = all(p.data.tobytes() == q.data.tobytes()
               for p, q in zip(sam_params.parameters(), sgd_params.parameters()))
    criterion("3a SAM(rho=0, momentum=0, beta=0) == SGD", same, "bitwise over 100 steps")


def test_criterion_3b_zero_weights_equal_cross_entropy_training(criterion, tmp_path):
    cfg = ExperimentConfig().replace(**{
        "output_dir": str(tmp_path / "zero"), "model.hidden_sizes": [16],
        "data.synthetic.n_train": 600, "data.synthetic.n_aux": 300, "train.epochs": 2, "train.batch_size": 64,
        "loss.weights.generative": 0.0, "loss.weights.margin": 0.0,
    })
    res = train(cfg)

    # reference: cross-entropy only, same seed streams, no generative or margin machinery
    raw = load_datasets(cfg)
    norm = fit_normalizer(raw.id_train)
    xt, yt = norm.apply(raw.id_train).features, raw.id_train.labels
    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    params = init_mlp([2, 16, 3], int(streams[0].generate_state(1)[0]))
    order = np.random.default_rng(streams[1])
    sam_cfg = cfg.optim.sam_config(True)
    state = OptimizerState.for_params(params.parameters())
    for epoch in range(cfg.train.epochs):
        state.epoch = epoch
        perm = order.permutation(len(xt))
        for s in range(0, len(xt), cfg.train.batch_size):
            idx = perm[s:s + cfg.train.batch_size]
            sam_step(params.parameters(), lambda: cross_entropy(forward(params, xt[idx]), yt[idx]), state, sam_cfg)
    same = all(p.data.tobytes() == q.data.tobytes()
               for p, q in zip(res.params.parameters(), params.parameters()))
    criterion("3b lambda1=lambda2=0 == cross-entropy training", same, f"bitwise over {state.step} steps")


# --- 4. SGLD stationarity -------------------------------------------------------------------

class UnitQuadratic:
    """E(x) = ||x||^2 / 2, whose Gibbs law is the standard Gaussian."""

    in_dim = 2

    def energy(self, x):
        sq = ad.matmul(ad.square(x), Tensor(np.ones((2, 1))))
        return ad.scale(ad.gather(sq, np.zeros(x.shape[0], dtype=int)), 0.5)


def test_criterion_4_sgld_stationarity(criterion):
    t0 = time.perf_counter()
    n = 5000
    buf = ReplayBuffer(n, [-1.0, -1.0], [1.0, 1.0])
    cfg = SgldConfig(step_size=0.1, n_steps=100, reinit_prob=0.0, buffer_capacity=n)
    rng = np.random.default_rng(0)
    buf.write(np.full(n, -1), buf.init_samples(n, rng), rng)
    for _ in range(25):  # 2500 persistent steps; mixing time is about 2 / eps^2 = 200
        sample_negatives(UnitQuadratic(), buf, n, cfg, rng)
    var = buf.entries[:n].var(axis=0)
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(np.abs(var - 1.0) <= 0.15)) and elapsed < 60
    criterion("4 SGLD stationarity", ok,
              f"per-coordinate variance {var[0]:.3f}, {var[1]:.3f} within 1.0 +/- 0.15; {elapsed:.1f}s < 60s")


# --- 5-7. benchmark ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    t0 = time.perf_counter()
    ablate(ExperimentConfig(output_dir=str(root)), seeds=SEEDS)
    elapsed = time.perf_counter() - t0
    with open(root / "ablation_summary.csv", newline="") as fh:
        summary = {(r["cell"], r["score_kind"]): r for r in csv.DictReader(fh) if r["ood_dataset"] == "ring"}
    return summary, elapsed


def _get(summary, cell, kind, key="auroc"):
    return float(summary[(cell, kind)][key])


@pytest.mark.slow
def test_criterion_5_energy_beats_softmax(criterion, benchmark):
    summary, elapsed = benchmark
    e_auc, s_auc = _get(summary, "mejem", "energy"), _get(summary, "mejem", "softmax")
    fpr = _get(summary, "mejem", "energy", "fpr95")
    n_seeds = int(summary[("mejem", "energy")]["n_seeds"])
    ok = e_auc >= s_auc and e_auc >= 0.95 and fpr <= 0.10 and n_seeds == 5 and elapsed < 300
    criterion("5 MEJEM energy score beats softmax score", ok,
              f"energy AUROC {e_auc:.4f} >= softmax {s_auc:.4f}, >= 0.95; FPR95 {fpr:.4f} <= 0.10; "
              f"{n_seeds} seeds; 25-run ablation {elapsed:.0f}s < 300s")


@pytest.mark.slow
def test_criterion_6_ablation_ordering(criterion, benchmark):
    summary, _ = benchmark
    full = _get(summary, "mejem", "energy")
    gen = _get(summary, "generative_only", "energy")
    mar = _get(summary, "margin_only", "energy")
    base = _get(summary, "softmax_sam", "softmax")
    ok = (full >= gen - TIE and full >= mar - TIE and gen >= base - TIE and mar >= base - TIE)
    criterion("6 ablation ordering", ok,
              f"mejem {full:.4f} >= generative-only {gen:.4f}, margin-only {mar:.4f} "
              f">= flags-off softmax {base:.4f} (ties within {TIE})")


@pytest.mark.slow
def test_criterion_7_closed_set_precision(criterion, benchmark):
    summary, _ = benchmark
    ours = _get(summary, "mejem", "energy", "precision")
    plain = _get(summary, "softmax", "softmax", "precision")
    criterion("7 closed-set precision", ours >= plain - 0.03,
              f"MEJEM {ours:.4f} vs plain classifier {plain:.4f} (within 0.03)")


# --- 8. determinism ------------------------------------------------------------------------

def test_criterion_8_determinism(criterion, tmp_path, monkeypatch):
    cfg = ExperimentConfig().replace(**{
        "output_dir": "run", "model.hidden_sizes": [16], "data.synthetic.n_train": 600,
        "data.synthetic.n_aux": 600, "data.synthetic.n_test": 150, "data.synthetic.n_ood": 200,
        "train.epochs": 2, "train.batch_size": 64, "sgld.n_steps": 5,
    })
    cfg.dump(tmp_path / "cfg.json")
    outputs = []
    for attempt in ("a", "b"):
        monkeypatch.setenv("MEJEM_OUTPUT_ROOT", str(tmp_path / attempt))
        for cmd in ("gen-data", "train", "evaluate"):
            assert main([cmd, "--config", str(tmp_path / "cfg.json")]) == 0
        assert main(["report", str(tmp_path / attempt / "run")]) == 0
        run = tmp_path / attempt / "run"
        files = sorted([*run.glob("data/*.csv"), *run.glob("*.csv"), run / "metrics.json",
                        run / "train_log.jsonl", run / "report" / "summary.csv"])
        outputs.append({f.relative_to(run).as_posix(): f.read_bytes() for f in files})
    a, b = outputs
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    differing = sorted(k for k in a if a.get(k) != b.get(k))
    criterion("8 determinism", same and "metrics.json" in a and "scores_ring.csv" in a,
              f"{len(a)} files byte-identical across two runs" if same else f"differ: {differing}")
