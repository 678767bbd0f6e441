"""Training, evaluation and ablation orchestration."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as dio
from .checkpoint import Checkpoint, load_checkpoint, params_hash, save_checkpoint
from .config import ExperimentConfig
from .data import LabeledBatch, Normalizer
from .errors import ConfigError, DivergenceError
from .losses import mejem_objective
from .metrics import HistogramSpec, closed_set_precision, histogram, ood_metrics
from .model import ModelParams, forward, init_mlp
from .sam import OptimizerState, sam_step
from .scoring import SCORE_KINDS, calibrate_threshold, predict_open_set, score
from .sgld import ReplayBuffer, sample_negatives

log = logging.getLogger("mejem")

OUTPUT_ROOT_ENV = "MEJEM_OUTPUT_ROOT"

METRICS_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["model", "score_kind", "ood_dataset", "auroc", "fpr95", "precision",
                     "n_id", "n_ood", "config_hash"],
        "properties": {
            "model": {"type": "string"},
            "score_kind": {"enum": list(SCORE_KINDS)},
            "ood_dataset": {"type": "string"},
            "auroc": {"type": "number", "minimum": 0, "maximum": 1},
            "fpr95": {"type": "number", "minimum": 0, "maximum": 1},
            "precision": {"type": "number", "minimum": 0, "maximum": 1},
            "n_id": {"type": "integer", "minimum": 1},
            "n_ood": {"type": "integer", "minimum": 1},
            "threshold": {"type": "number"},
            "config_hash": {"type": "string"},
        },
        "additionalProperties": False,
    },
}

# (name, generative, margin, sam); auxiliary data follows the margin flag
ABLATION_CELLS = (
    ("mejem", True, True, True),
    ("generative_only", True, False, True),
    ("margin_only", False, True, True),
    ("softmax_sam", False, False, True),
    ("softmax", False, False, False),
)


def resolve_output_dir(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _sub_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


# ---------------------------------------------------------------------- data


@dataclass
class Datasets:
    id_train: LabeledBatch
    id_val: LabeledBatch
    id_test: LabeledBatch
    ood_test: dict[str, LabeledBatch]
    n_classes: int
    aux_ood: LabeledBatch | None = None

    def all_batches(self) -> dict[str, LabeledBatch]:
        out = {"id_train": self.id_train, "id_val": self.id_val, "id_test": self.id_test}
        if self.aux_ood is not None:
            out["aux_ood"] = self.aux_ood
        out.update({f"ood_test_{k}": v for k, v in self.ood_test.items()})
        return out

    def normalized(self, norm: Normalizer) -> "Datasets":
        return Datasets(
            norm.apply(self.id_train), norm.apply(self.id_val), norm.apply(self.id_test),
            {k: norm.apply(v) for k, v in self.ood_test.items()}, self.n_classes,
            norm.apply(self.aux_ood) if self.aux_ood is not None else None,
        )


def load_datasets(cfg: ExperimentConfig) -> Datasets:
    """Raw (unnormalised) splits; synthetic sets are pure functions of (config, seed)."""
    dc = cfg.data
    if dc.source == "synthetic":
        s = dc.synthetic
        if s.n_train % s.n_classes or s.n_test % s.n_classes:
            raise ConfigError("n_train and n_test must be multiples of n_classes")
        if s.ood_radius <= s.mean_radius:
            raise ConfigError("ood_radius must exceed mean_radius")
        pool = dio.gen_gaussian_mixture(s.n_classes, s.n_train // s.n_classes, s.mean_radius,
                                        s.std, _sub_seed(cfg.seed, 1), s.dim)
        test = dio.gen_gaussian_mixture(s.n_classes, s.n_test // s.n_classes, s.mean_radius,
                                        s.std, _sub_seed(cfg.seed, 2), s.dim, split="id_test")
        aux = dio.gen_aux_outliers(s.n_aux, s.aux_box_halfwidth, s.aux_exclusion_radius,
                                   _sub_seed(cfg.seed, 3), s.dim)
        ring = dio.gen_ring_ood(s.n_ood, s.ood_radius, s.ood_noise_std, _sub_seed(cfg.seed, 4), s.dim)
        train, val = dio.split_validation(pool, dc.val_fraction, _sub_seed(cfg.seed, 5))
        return Datasets(train, val, test, {"ring": ring}, s.n_classes, aux)

    c = dc.csv
    pool = dio.load_feature_csv(c.id_train, c.n_classes, "id_train")
    test = dio.load_feature_csv(c.id_test, c.n_classes, "id_test")
    aux = dio.load_feature_csv(c.aux_ood, c.n_classes, "aux_ood") if c.aux_ood else None
    ood = {name: dio.load_feature_csv(p, c.n_classes, "ood_test") for name, p in sorted(c.ood_test.items())}
    train, val = dio.split_validation(pool, dc.val_fraction, _sub_seed(cfg.seed, 5))
    dims = {b.dim for b in [train, test, *ood.values()] + ([aux] if aux is not None else [])}
    if len(dims) != 1:
        raise ConfigError(f"feature dimensions disagree across CSV files: {sorted(dims)}")
    return Datasets(train, val, test, ood, c.n_classes, aux)


def write_datasets(ds: Datasets, out_dir) -> dict[str, str]:
    out_dir = Path(out_dir)
    written = {}
    for name, batch in ds.all_batches().items():
        path = out_dir / f"{name}.csv"
        dio.write_feature_csv(path, batch)
        written[name] = str(path)
    return written


# --------------------------------------------------------------------- train


@dataclass
class TrainResult:
    params: ModelParams
    normalizer: Normalizer
    checkpoint_path: Path
    checkpoint_hash: str
    log: list[dict] = field(default_factory=list)


def _write_provenance(cfg: ExperimentConfig, out_dir: Path) -> None:
    cfg.dump(out_dir / "config.json")
    (out_dir / "config_hash.txt").write_text(cfg.config_hash() + "\n")


def train(cfg: ExperimentConfig, datasets: Datasets | None = None, resume=None) -> TrainResult:
    """Run the full training loop and write ``checkpoint.npz`` plus ``train_log.jsonl``.

    With ``resume`` (a checkpoint path) training continues from the epoch
    stored there, restoring optimiser, buffer and RNG state.
    """
    cfg.validate()
    out_dir = resolve_output_dir(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_provenance(cfg, out_dir)

    raw = datasets or load_datasets(cfg)
    if raw.aux_ood is None and cfg.flags.margin:
        raise ConfigError("margin loss requires auxiliary outlier data")
    norm = dio.fit_normalizer(raw.id_train)
    ds = raw.normalized(norm)
    x_train, y_train = ds.id_train.features, ds.id_train.labels
    x_aux = ds.aux_ood.features if ds.aux_ood is not None else None

    flags, weights = cfg.flags, cfg.loss.weights
    use_gen = flags.generative and weights.generative > 0
    use_margin = flags.margin and weights.margin > 0
    sam_cfg = cfg.optim.sam_config(cfg.flags.sam)

    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    layer_sizes = [ds.id_train.dim, *cfg.model.hidden_sizes, ds.n_classes]
    params = init_mlp(layer_sizes, int(streams[0].generate_state(1)[0]))
    order_rng, aux_rng, sgld_rng = (np.random.default_rng(s) for s in streams[1:])
    buffer = ReplayBuffer(cfg.sgld.buffer_capacity, x_train.min(axis=0), x_train.max(axis=0))
    state = OptimizerState.for_params(params.parameters())
    start_epoch = 0

    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.config_hash != cfg.config_hash():
            raise ConfigError("resume checkpoint was written under a different config")
        params, state, start_epoch = ck.params, ck.optimizer, ck.epoch
        buffer = ck.buffer or buffer
        for rng, key in ((order_rng, "order"), (aux_rng, "aux"), (sgld_rng, "sgld")):
            rng.bit_generator.state = ck.rng_states[key]

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(
            params, norm, cfg.to_json(), cfg.config_hash(), state, buffer,
            {"order": order_rng.bit_generator.state, "aux": aux_rng.bit_generator.state,
             "sgld": sgld_rng.bit_generator.state},
            epoch,
        )

    log_path = out_dir / "train_log.jsonl"
    records: list[dict] = []
    n = len(x_train)
    bs = cfg.train.batch_size
    t0 = time.perf_counter()
    with open(log_path, "a" if resume is not None else "w") as log_fh:
        for epoch in range(start_epoch, cfg.train.epochs):
            state.epoch = epoch
            perm = order_rng.permutation(n)
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                xb, yb = x_train[idx], y_train[idx]
                xa = None
                if use_margin:
                    xa = x_aux[aux_rng.choice(len(x_aux), size=len(idx), replace=len(x_aux) < len(idx))]
                xn = sample_negatives(params, buffer, len(idx), cfg.sgld, sgld_rng) if use_gen else None

                def loss_fn():
                    return mejem_objective(params, xb, yb, xa, xn, weights, cfg.loss.margin, flags)

                step = state.step
                try:
                    _, diag = sam_step(params.parameters(), loss_fn, state, sam_cfg)
                except DivergenceError as exc:
                    exc.diagnostics.update(step=step, epoch=epoch)
                    raise
                rec = {"step": step, "epoch": epoch, **{k: float(v) for k, v in diag.items()}}
                records.append(rec)
                log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                if cfg.train.log_every and step % cfg.train.log_every == 0:
                    log.info("step %d epoch %d lr %.4g ce %.4f gen %.4f margin %.4f",
                             step, epoch, rec["lr"], rec["ce"], rec["gen"], rec["margin"])
            if not params.is_finite():
                raise DivergenceError("parameters became non-finite", {"epoch": epoch})
            every = cfg.train.checkpoint_every
            if every and (epoch + 1) % every == 0 and epoch + 1 < cfg.train.epochs:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.npz", snapshot(epoch + 1))

    ckpt_path = save_checkpoint(out_dir / "checkpoint.npz", snapshot(cfg.train.epochs))
    digest = params_hash(params, norm)
    summary = {"checkpoint": ckpt_path.name, "checkpoint_hash": digest, "steps": state.step,
               "config_hash": cfg.config_hash()}
    (out_dir / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("trained %d steps in %.1fs -> %s", state.step, time.perf_counter() - t0, ckpt_path)
    return TrainResult(params, norm, ckpt_path, digest, records)


# ------------------------------------------------------------------ evaluate


@dataclass
class RunReport:
    model: str
    precision: float
    metrics: list[dict]
    thresholds: dict[str, float]
    config_hash: str
    artifacts: dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0

    def lookup(self, score_kind: str, ood_dataset: str = "ring") -> dict:
        for m in self.metrics:
            if m["score_kind"] == score_kind and m["ood_dataset"] == ood_dataset:
                return m
        raise KeyError((score_kind, ood_dataset))


def _fmt(v: float) -> str:
    return repr(float(v))


def evaluate(cfg: ExperimentConfig, checkpoint=None, datasets: Datasets | None = None,
             out_dir=None) -> RunReport:
    """Score every evaluation split and emit score CSVs, metrics JSON and histograms.

    ``checkpoint`` may be a path, a :class:`Checkpoint`, or ``None`` for
    ``<output_dir>/checkpoint.npz``.
    """
    from .plotting import save_histogram_svg

    t0 = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if checkpoint is None:
        checkpoint = out_dir / "checkpoint.npz"
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    raw = datasets or load_datasets(cfg)
    if not raw.ood_test:
        raise ConfigError("evaluation needs at least one OOD test set")
    ds = raw.normalized(ck.normalizer)
    params = ck.params.frozen()
    k = params.n_classes
    chash = cfg.config_hash()

    val_logits = forward(params, ds.id_val.features).data
    id_logits = forward(params, ds.id_test.features).data
    precision = closed_set_precision(np.argmax(id_logits, axis=1), ds.id_test.labels)
    thresholds = {kind: calibrate_threshold(score(val_logits, kind), cfg.eval.target_tpr, kind)
                  for kind in SCORE_KINDS}
    open_thr = thresholds[cfg.eval.open_set_score]
    id_scores = {kind: score(id_logits, kind) for kind in SCORE_KINDS}

    metrics, artifacts = [], {}
    for name, batch in ds.ood_test.items():
        ood_logits = forward(params, batch.features).data
        ood_scores = {kind: score(ood_logits, kind) for kind in SCORE_KINDS}
        for kind in SCORE_KINDS:
            m = ood_metrics(id_scores[kind], ood_scores[kind], cfg.eval.target_tpr)
            metrics.append({
                "model": cfg.name, "score_kind": kind, "ood_dataset": name,
                "auroc": m.auroc, "fpr95": m.fpr95, "precision": precision,
                "n_id": m.n_id, "n_ood": m.n_ood,
                "threshold": thresholds[kind].delta, "config_hash": chash,
            })
            edges, counts = histogram({"id": id_scores[kind], "ood": ood_scores[kind]},
                                      HistogramSpec(cfg.eval.hist_bins))
            hist_csv = out_dir / f"hist_{kind}_{name}.csv"
            with open(hist_csv, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bin_left", "bin_right", "count_id", "count_ood"])
                for i in range(len(edges) - 1):
                    w.writerow([_fmt(edges[i]), _fmt(edges[i + 1]), int(counts["id"][i]), int(counts["ood"][i])])
            artifacts[f"hist_{kind}_{name}"] = str(hist_csv)
            svg = save_histogram_svg(edges, counts, out_dir / f"hist_{kind}_{name}.svg",
                                     title=f"{cfg.name}: {kind} score, ID vs {name}")
            artifacts[f"hist_{kind}_{name}_svg"] = str(svg)

        all_logits = np.concatenate([id_logits, ood_logits])
        open_labels = predict_open_set(all_logits, open_thr)
        score_csv = out_dir / f"scores_{name}.csv"
        with open(score_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "origin", "softmax_score", "energy_score", "argmax_class", "open_set_label"])
            soft = np.concatenate([id_scores["softmax"], ood_scores["softmax"]])
            energy = np.concatenate([id_scores["energy"], ood_scores["energy"]])
            argmax = np.argmax(all_logits, axis=1)
            n_id = len(id_logits)
            for i in range(len(all_logits)):
                w.writerow([i, "id" if i < n_id else "ood", _fmt(soft[i]), _fmt(energy[i]),
                            int(argmax[i]), int(open_labels[i])])
        artifacts[f"scores_{name}"] = str(score_csv)
        log.info("%s vs %s: energy AUROC %.4f, softmax AUROC %.4f", cfg.name, name,
                 metrics[-1]["auroc"], metrics[-2]["auroc"])

    write_metrics_json(out_dir / "metrics.json", metrics)
    artifacts["metrics"] = str(out_dir / "metrics.json")
    report = RunReport(cfg.name, precision, metrics,
                       {kind: t.delta for kind, t in thresholds.items()}, chash, artifacts,
                       time.perf_counter() - t0)
    (out_dir / "run_report.json").write_text(json.dumps({
        "model": report.model, "precision": precision, "open_set_score": cfg.eval.open_set_score,
        "open_set_reject_label": k, "thresholds": report.thresholds, "config_hash": chash,
        "artifacts": artifacts, "wall_clock_seconds": report.wall_clock,
    }, indent=2, sort_keys=True) + "\n")
    return report


def write_metrics_json(path, records: list[dict]) -> None:
    import jsonschema

    jsonschema.validate(records, METRICS_SCHEMA)
    Path(path).write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


def read_metrics_json(path) -> list[dict]:
    import jsonschema

    records = json.loads(Path(path).read_text())
    jsonschema.validate(records, METRICS_SCHEMA)
    return records


# -------------------------------------------------------------------- ablate


def cell_config(base: ExperimentConfig, cell: str, seed: int | None = None, out_root=None) -> ExperimentConfig:
    spec = {c[0]: c[1:] for c in ABLATION_CELLS}
    if cell not in spec:
        raise ConfigError(f"unknown ablation cell {cell!r}")
    gen, margin, sam = spec[cell]
    seed = base.seed if seed is None else seed
    root = Path(out_root) if out_root is not None else Path(base.output_dir)
    return base.replace(**{
        "name": cell, "seed": seed, "output_dir": str(root / f"seed{seed}" / cell),
        "flags.generative": gen, "flags.margin": margin, "flags.sam": sam, "flags.aux_data": margin,
    })


def ablate(base: ExperimentConfig, seeds=None, out_root=None, cells=None) -> list[RunReport]:
    """Train and evaluate every ablation cell for each seed; writes ``ablation.csv``
    (one row per run and score kind) and ``ablation_summary.csv`` (seed means)."""
    seeds = [base.seed] if seeds is None else list(seeds)
    cells = [c[0] for c in ABLATION_CELLS] if cells is None else list(cells)
    root = resolve_output_dir(out_root if out_root is not None else base.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    reports = []
    rows = []
    for seed in seeds:
        for cell in cells:
            cfg = cell_config(base, cell, seed, root)
            res = train(cfg)
            rep = evaluate(cfg, Checkpoint(res.params, res.normalizer))
            reports.append(rep)
            for m in rep.metrics:
                rows.append({"seed": seed, "cell": cell, "generative": cfg.flags.generative,
                             "margin": cfg.flags.margin, "sam": cfg.flags.sam,
                             "aux_data": cfg.flags.aux_data, "score_kind": m["score_kind"],
                             "ood_dataset": m["ood_dataset"], "auroc": m["auroc"],
                             "fpr95": m["fpr95"], "precision": m["precision"]})
    fields = list(rows[0]) if rows else []
    with open(root / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows)
    write_ablation_summary(rows, root / "ablation_summary.csv")
    return reports


def summarize_ablation(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["cell"], r["score_kind"], r["ood_dataset"]), []).append(r)
    out = []
    for (cell, kind, ood), rs in groups.items():
        out.append({"cell": cell, "score_kind": kind, "ood_dataset": ood, "n_seeds": len(rs),
                    "auroc": float(np.mean([r["auroc"] for r in rs])),
                    "fpr95": float(np.mean([r["fpr95"] for r in rs])),
                    "precision": float(np.mean([r["precision"] for r in rs]))})
    return out


def write_ablation_summary(rows: list[dict], path) -> list[dict]:
    summary = summarize_ablation(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["cell", "score_kind", "ood_dataset", "n_seeds",
                                           "auroc", "fpr95", "precision"])
        w.writeheader()
        w.writerows({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()} for r in summary)
    return summary
