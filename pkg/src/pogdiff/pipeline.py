"""End-to-end runs: data → index → density model → training → sampling → metrics."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, stream
from .data import Dataset, generate, read_csv
from .density import DensityVae, VaeConfig, dump_elbo_table, elbo, fit
from .diffusion import NoiseSchedule, ddim_sample, schedule_new
from .metrics import coverage_match, grecall, toy_fid
from .neighbors import build_index
from .nn import MlpDenoiser, load_checkpoint, save_checkpoint
from .training import NeighborPsiSource, PsiParams, TrainConfig, train, write_loss_trace

__all__ = ["StageError", "RunRecord", "make_dataset", "train_stage", "sample_stage", "evaluate",
           "run_experiment", "emit_report", "MixedConfigError", "METHODS"]

log = logging.getLogger(__name__)

METHODS = ("vanilla", "pogdiff")
METRIC_FIELDS = ["method", "seed", "shot", "metric", "value"]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class MixedConfigError(ValueError):
    pass


@dataclass
class RunRecord:
    config_hash: str
    method: str
    seed: int
    loss_trace_path: str
    metrics: list[dict] = field(default_factory=list)
    coverage: list[dict] = field(default_factory=list)
    forward_passes_per_step: int = 1
    psi_clamped: int = 0
    wall_time: float = 0.0

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> RunRecord:
        return cls(**json.loads(Path(path).read_text()))


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def make_dataset(config: ExperimentConfig, seed: int) -> Dataset:
    ds = config.dataset
    data_seed = ds.seed if ds.seed is not None else int(stream(seed, "data").integers(2**63))
    return generate(ds.specs(), ds.data_dim, ds.cond_dim, data_seed, ds.center_scale)


def _schedule(config: ExperimentConfig) -> NoiseSchedule:
    s = config.schedule
    return schedule_new(s.T, s.beta_start, s.beta_end)


def _new_model(config: ExperimentConfig, dataset: Dataset, seed: int) -> MlpDenoiser:
    return MlpDenoiser(dataset.data_dim, dataset.cond_dim, config.schedule.T, config.model.hidden,
                       config.model.activation, rng=stream(seed, "init"))


def build_psi_source(config: ExperimentConfig, dataset: Dataset, seed: int,
                     out: Path | None = None) -> NeighborPsiSource:
    """kNN index over data embeddings plus a frozen VAE's per-sample ELBO."""
    p = config.psi
    index = build_index(dataset.ids, dataset.identities, dataset.x0, dataset.y, p.k)
    v = config.vae
    rng = stream(seed, "vae")
    vae = DensityVae(dataset.cond_dim, v.latent_dim, v.hidden, rng=rng)
    fit(vae, dataset.y, VaeConfig(v.latent_dim, v.hidden, v.epochs, v.lr), rng)
    elbos = elbo(vae, dataset.y)
    a3 = p.resolved_a3(dataset.cond_dim)
    if out is not None:
        index.dump_csv(out / "index.csv")
        dump_elbo_table(out / "elbo.csv", dataset.ids, dataset.identities, elbos, a3)
    return NeighborPsiSource(dataset, index, elbos, PsiParams(p.k, p.a1, p.a2, a3, p.psi_max))


def train_stage(config: ExperimentConfig, dataset: Dataset, method: str, seed: int,
                out: Path | None = None) -> tuple[MlpDenoiser, list, NeighborPsiSource | None]:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    source = None
    if method == "pogdiff":
        with _stage("psi"):
            source = build_psi_source(config, dataset, seed, out)
    with _stage("train"):
        model = _new_model(config, dataset, seed)
        t = config.training
        tc = TrainConfig(t.steps, t.batch_size, t.lr, t.optimizer, t.stop_grad_neighbor, t.psi_override)
        trace = train(model, _schedule(config), dataset, tc, stream(seed, "batch"), stream(seed, "neighbor"),
                      source, method)
        if out is not None:
            write_loss_trace(out / "loss_trace.csv", trace)
            save_checkpoint(model, out / "model.ckpt")
    return model, trace, source


def identity_conditions(dataset: Dataset) -> dict[str, np.ndarray]:
    """Generation prompt per identity: the mean of its training condition embeddings."""
    return {lab: dataset.y[dataset.members(lab)].mean(axis=0) for lab in dataset.labels()}


def sample_stage(config: ExperimentConfig, model: MlpDenoiser, dataset: Dataset, seed: int) -> dict[str, np.ndarray]:
    rng = stream(seed, "sample")
    schedule = _schedule(config)
    n = config.eval.samples_per_identity
    out = {}
    for lab, y in identity_conditions(dataset).items():
        x_T = rng.standard_normal((n, dataset.data_dim))
        out[lab] = ddim_sample(model, schedule, y, config.eval.ddim_steps, x_T)
    return out


def write_samples(path: Path, samples: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = next(iter(samples.values())).shape[1]
        w.writerow(["identity"] + [f"x_{i}" for i in range(dim)])
        for lab, rows in samples.items():
            for r in rows:
                w.writerow([lab] + [f"{v:.17g}" for v in r])


def read_samples(path: Path) -> dict[str, np.ndarray]:
    out: dict[str, list] = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for r in rows[1:]:
        out.setdefault(r[0], []).append([float(v) for v in r[1:]])
    return {k: np.array(v) for k, v in out.items()}


def evaluate(config: ExperimentConfig, dataset: Dataset, samples: dict[str, np.ndarray], method: str,
             seed: int) -> tuple[list[dict], list[dict]]:
    """gRecall and toy FID over all identities and over few-shot identities.

    Embeddings are the raw data vectors (the same identity embedder the
    neighbour index uses). FID compares each identity's generated set with a
    fresh reference draw from its true distribution, averaged per split.
    """
    counts = dataset.counts()
    labels = dataset.labels()
    few = [lab for lab in labels if counts[lab] <= config.eval.few_shot_max]
    training = {lab: (dataset.ids[dataset.members(lab)].tolist(), dataset.x0[dataset.members(lab)])
                for lab in labels}
    report = coverage_match(samples, training, config.eval.threshold)
    ref_rng = stream(seed, "reference")
    fids = {}
    for lab in labels:
        ref = dataset.reference_set(lab, config.eval.reference_per_identity, ref_rng)
        try:
            fids[lab] = toy_fid(samples[lab], ref)
        except ValueError:
            fids[lab] = float("nan")
    rows = []
    for shot, group in (("all", labels), ("few", few)):
        if not group:
            continue
        rows.append({"method": method, "seed": seed, "shot": shot, "metric": "grecall",
                     "value": grecall(report.subset(group))})
        rows.append({"method": method, "seed": seed, "shot": shot, "metric": "fid",
                     "value": float(np.mean([fids[lab] for lab in group]))})
    coverage = [{"identity": lab, "covered": len(c.covered), "training": len(c.training_ids),
                 "generated": c.n_generated, "correct": c.n_correct, "grecall": c.grecall}
                for lab, c in report.per_identity.items()]
    return rows, coverage


def write_metrics(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "value": f"{r['value']:.17g}"})


def run_experiment(config: ExperimentConfig, method: str, seed: int, out_dir: str | Path | None = None) -> RunRecord:
    """One full (method, seed) run. Artifacts land in `out_dir` as stages finish."""
    start = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    with _stage("data"):
        dataset = make_dataset(config, seed)
        if out is not None:
            dataset.to_csv(out / "dataset.csv")
    model, _, source = train_stage(config, dataset, method, seed, out)
    with _stage("sample"):
        samples = sample_stage(config, model, dataset, seed)
        if out is not None:
            write_samples(out / "samples.csv", samples)
    with _stage("eval"):
        rows, coverage = evaluate(config, dataset, samples, method, seed)
        if out is not None:
            write_metrics(out / "metrics.csv", rows)
    record = RunRecord(config.config_hash(), method, seed,
                       str(out / "loss_trace.csv") if out is not None else "",
                       rows, coverage, 2 if method == "pogdiff" else 1,
                       source.n_clamped if source is not None else 0,
                       time.perf_counter() - start)
    if out is not None:
        record.save(out / "record.json")
    return record


def aggregate(records: Sequence[RunRecord]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for rec in records:
        for row in rec.metrics:
            groups.setdefault((row["method"], row["shot"], row["metric"]), []).append(float(row["value"]))
    out = []
    for (method, shot, metric), vals in sorted(groups.items()):
        arr = np.array(vals)
        out.append({"method": method, "shot": shot, "metric": metric, "n": len(vals),
                    "mean": float(arr.mean()), "std": float(arr.std())})
    return out


def emit_report(records: Sequence[RunRecord], out_dir: str | Path, force: bool = False,
                coverage_breakdown: bool = False) -> list[dict]:
    """Write report.csv (mean ± population std per method/shot/metric) and report.txt."""
    if not records:
        raise ValueError("need at least one run record")
    hashes = {r.config_hash for r in records}
    if len(hashes) > 1 and not force:
        raise MixedConfigError(f"records come from {len(hashes)} different configs; pass force to combine")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate(records)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "shot", "metric", "n", "mean", "std"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "mean": f"{r['mean']:.17g}", "std": f"{r['std']:.17g}"})
    lines = [f"{'method':<10}{'shot':<6}{'metric':<9}{'n':>3}  {'mean':>12}  {'std':>10}"]
    for r in rows:
        lines.append(f"{r['method']:<10}{r['shot']:<6}{r['metric']:<9}{r['n']:>3}  {r['mean']:>12.4f}  {r['std']:>10.4f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    if coverage_breakdown:
        with open(out / "coverage.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "seed", "identity", "covered", "training", "generated", "correct", "grecall"])
            for rec in records:
                for c in rec.coverage:
                    w.writerow([rec.method, rec.seed, c["identity"], c["covered"], c["training"], c["generated"],
                                c["correct"], f"{c['grecall']:.17g}"])
    return rows


def load_dataset(path: str | Path) -> Dataset:
    return read_csv(path)


def load_model(path: str | Path) -> MlpDenoiser:
    return load_checkpoint(path)
