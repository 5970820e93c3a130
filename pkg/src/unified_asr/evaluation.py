"""Frame error rates, SNR-binned tables and the desk-scale experiment suite.

FER stands in for WER: there is no decoder here, so every trend the suite
reports is a directional analog on synthetic data, not a word-error measurement.

Suite experiments (one training run per model and seed):

    E1  zero_pad   MC frontend only, SC items fed with zeroed aux channels
    E2  unified    both frontends; evaluated on the MC path (vs E1)
    E3  sc_only    SC frontend only, trained on train_sc + primary of train_mc
    E4  mc_only    MC frontend only, trained on train_mc
    E5  unified    the E2 model, SC path
    E6  unified    the E2 model, MC path
"""

import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import corpus
from .errors import ConfigError, DataIOError, InvalidInputError
from .features import compute_gmv_stats
from .model import ModelConfig
from .signal_sim import SNR_BINS, snr_bin, strip_auxiliary

log = logging.getLogger(__name__)

BINS = SNR_BINS + ("all",)
PATHS = ("sc", "mc", "zero_pad")
INF_SENTINEL = float("inf")


def frame_error_rate(logits, labels):
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise InvalidInputError(f"{logits.shape[0] if logits.ndim else 0} logit frames vs {labels.shape[0]} labels")
    if labels.shape[0] == 0:
        raise InvalidInputError("no frames to score")
    return float(np.mean(np.argmax(logits, axis=1) != labels))


@dataclass
class MetricsRow:
    experiment_id: str
    path: str
    snr_bin: str
    frame_error_rate: float
    normalized: float = float("nan")
    num_frames: int = 0

    def __post_init__(self):
        if self.path not in PATHS:
            raise InvalidInputError(f"unknown path {self.path!r}")
        if self.snr_bin not in BINS:
            raise InvalidInputError(f"unknown snr bin {self.snr_bin!r}")
        if not 0.0 <= self.frame_error_rate <= 1.0:
            raise InvalidInputError(f"FER {self.frame_error_rate} outside [0, 1]")


TSV_HEADER = "experiment_id\tpath\tsnr_bin\tframe_error_rate\tnormalized\tnum_frames"


def _fmt(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return repr(float(x))


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)
    baseline_id: str = ""

    def get(self, experiment_id, bin_name):
        for r in self.rows:
            if r.experiment_id == experiment_id and r.snr_bin == bin_name:
                return r
        return None

    def experiments(self):
        seen = []
        for r in self.rows:
            if r.experiment_id not in seen:
                seen.append(r.experiment_id)
        return seen

    def to_tsv(self):
        lines = [f"# baseline={self.baseline_id}", TSV_HEADER]
        for r in self.rows:
            lines.append("\t".join([r.experiment_id, r.path, r.snr_bin, _fmt(r.frame_error_rate),
                                    _fmt(r.normalized), str(r.num_frames)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text):
        lines = [l for l in text.splitlines() if l.strip()]
        baseline = ""
        if lines and lines[0].startswith("# baseline="):
            baseline = lines.pop(0)[len("# baseline="):]
        if not lines or lines[0] != TSV_HEADER:
            raise InvalidInputError("not a metrics table")
        rows = []
        for line in lines[1:]:
            e, p, b, fer, norm, nf = line.split("\t")
            rows.append(MetricsRow(e, p, b, float(fer), float(norm), int(nf)))
        return cls(rows, baseline)

    def to_dict(self):
        return {"baseline_id": self.baseline_id, "rows": [asdict(r) for r in self.rows]}


def _path_label(model, path):
    return "zero_pad" if model.config.mode == "zero_pad" else path


def evaluate(model, test_source, path_selector="auto", experiment_id="", batch_size=16):
    """Per-bin and overall FER rows for one model on one inference path.

    ``path_selector`` is ``sc`` (primary channel only), ``mc`` or ``auto``
    (whatever the model routes each utterance to).  FER pools frames
    within a bin.  Empty bins are omitted.
    """
    if path_selector not in ("sc", "mc", "auto"):
        raise InvalidInputError(f"unknown path selector {path_selector!r}")
    utts = list(test_source)
    errors = dict.fromkeys(BINS, 0)
    frames = dict.fromkeys(BINS, 0)
    paths = set()
    for start in range(0, len(utts), batch_size):
        chunk = utts[start : start + batch_size]
        items = []
        for u in chunk:
            if path_selector == "sc":
                u = strip_auxiliary(u)
            path = model.route(u)
            if path_selector == "mc" and path != "mc":
                raise InvalidInputError(f"{u.utterance_id}: model routes it to the {path} path")
            items.append(model.prepare(u, path))
            paths.add(path)
        for u, it, lg in zip(chunk, items, model.forward_items(items)):
            wrong = int(np.sum(np.argmax(lg, axis=1) != it.labels))
            for b in (snr_bin(u.snr_db), "all"):
                errors[b] += wrong
                frames[b] += it.num_frames
    if len(paths) > 1:
        raise InvalidInputError("test set mixes SC and MC paths; pick one with path_selector")
    label = _path_label(model, paths.pop() if paths else "sc")
    rows = []
    for b in BINS:
        if frames[b] == 0:
            log.info("%s: no test utterances in the %s bin, row omitted", experiment_id, b)
            continue
        rows.append(MetricsRow(experiment_id, label, b, errors[b] / frames[b], num_frames=frames[b]))
    return rows


def normalize_to_baseline(table, baseline_id):
    """100 * FER / FER(baseline) per bin; the baseline itself reads 100.0."""
    base = {r.snr_bin: r.frame_error_rate for r in table.rows if r.experiment_id == baseline_id}
    if not base:
        raise InvalidInputError(f"no rows for baseline {baseline_id!r}")
    rows = []
    for r in table.rows:
        if r.snr_bin not in base:
            raise InvalidInputError(f"baseline {baseline_id!r} has no {r.snr_bin} row")
        fb = base[r.snr_bin]
        if r.experiment_id == baseline_id:
            norm = 100.0
        elif fb == 0.0:
            warnings.warn(f"baseline FER is zero in the {r.snr_bin} bin; normalized value set to inf")
            norm = INF_SENTINEL
        else:
            norm = 100.0 * r.frame_error_rate / fb
        rows.append(MetricsRow(r.experiment_id, r.path, r.snr_bin, r.frame_error_rate, norm, r.num_frames))
    return MetricsTable(rows, baseline_id)


def relative_reduction(baseline_fer, fer):
    """Relative FER reduction of ``fer`` over ``baseline_fer``; 0 when both are 0."""
    if baseline_fer == 0.0:
        return 0.0 if fer == 0.0 else -INF_SENTINEL
    return (baseline_fer - fer) / baseline_fer


# ---------------------------------------------------------------- suite

MODEL_RUNS = {
    # run name -> (mode, which training data, derive SC from MC)
    "E1": ("zero_pad", "sc+mc", True),
    "E2": ("unified", "sc+mc", True),
    "E3": ("sc_only", "sc+mcprimary", False),
    "E4": ("mc_only", "mc", False),
}
# experiment -> (model run, evaluation path)
EXPERIMENTS = {
    "E1": ("E1", "mc"),
    "E2": ("E2", "mc"),
    "E3": ("E3", "sc"),
    "E4": ("E4", "mc"),
    "E5": ("E2", "sc"),
    "E6": ("E2", "mc"),
}
TRAINING_DATA = {"E1": "sc + mc", "E2": "sc + mc", "E3": "sc + mc", "E4": "mc", "E5": "sc + mc", "E6": "sc + mc"}
DESCRIPTIONS = {
    "E1": "MC, zero-pad missing channels",
    "E2": "Unified (MC FE + Shared Backend)",
    "E3": "Standalone SC",
    "E4": "Standalone MC",
    "E5": "Unified (SC FE + Shared Backend)",
    "E6": "Unified (MC FE + Shared Backend)",
}
INCOMPLETE_MARKER = "SUITE_INCOMPLETE"


@dataclass
class SuiteConfig:
    experiments: tuple = ("E1", "E2", "E3", "E4", "E5", "E6")
    seeds: tuple = (0, 1, 2)
    sim: corpus.SimConfig = field(default_factory=corpus.SimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: object = None  # TrainingConfig; seed is overridden per run
    workers: int = 1

    def __post_init__(self):
        from .trainer import TrainingConfig

        if self.training is None:
            self.training = TrainingConfig(epochs=10, learning_rate=3e-3)
        unknown = [e for e in self.experiments if e not in EXPERIMENTS]
        if unknown:
            raise ConfigError(f"unknown experiments {unknown}")
        if not self.seeds:
            raise ConfigError("suite needs at least one seed")

    def model_runs(self):
        return sorted({EXPERIMENTS[e][0] for e in self.experiments})


def _load_split(data_dir, name):
    return corpus.read_manifest(Path(data_dir) / f"{name}.tsv")


def ensure_dataset(cfg, data_dir):
    data_dir = Path(data_dir)
    if all((data_dir / f"{n}.tsv").exists() for n in ("train_sc", "train_mc", "test")):
        return data_dir
    corpus.generate_dataset(cfg, data_dir)
    return data_dir


def _run_one(run, seed, suite, data_dir, run_dir):
    """Train and evaluate one model; idempotent once ``DONE`` exists."""
    from .checkpoint import load_checkpoint
    from .trainer import train

    run_dir = Path(run_dir)
    done = run_dir / "DONE"
    if done.exists():
        return MetricsTable.from_tsv((run_dir / "metrics.tsv").read_text())
    mode, data, derive = MODEL_RUNS[run]
    sc = list(_load_split(data_dir, "train_sc"))
    mc = list(_load_split(data_dir, "train_mc"))
    test = list(_load_split(data_dir, "test"))
    stats = compute_gmv_stats(sc + mc)
    if data == "sc+mcprimary":
        sc_src, mc_src = sc + [strip_auxiliary(u) for u in mc], []
    elif data == "mc":
        sc_src, mc_src = [], mc
    else:
        sc_src, mc_src = sc, mc
    cfg = ModelConfig.from_dict({**suite.model.to_dict(), "mode": mode})
    tcfg = type(suite.training)(**{**suite.training.to_dict(), "seed": int(seed), "derive_sc_from_mc": derive})
    ckpt = run_dir / "model.ckpt"
    if ckpt.exists() and (run_dir / "train_log.tsv").exists():
        model = load_checkpoint(ckpt)
    else:
        model, _ = train(cfg, tcfg, sc_src, mc_src, out_dir=run_dir, stats=stats)
    rows = []
    for exp in suite.experiments:
        mrun, path = EXPERIMENTS[exp]
        if mrun == run:
            rows += evaluate(model, test, path, experiment_id=exp)
    table = MetricsTable(rows)
    (run_dir / "metrics.tsv").write_text(table.to_tsv())
    done.write_text("ok\n")
    return table


def _median_table(tables, experiments):
    rows = []
    for exp in experiments:
        for b in BINS:
            found = [t.get(exp, b) for t in tables]
            found = [r for r in found if r is not None]
            if not found:
                continue
            fer = float(np.median([r.frame_error_rate for r in found]))
            rows.append(MetricsRow(exp, found[0].path, b, fer, num_frames=found[0].num_frames))
    return MetricsTable(rows)


def format_comparison(table, experiments):
    """Comparison table: experiment, training data, model / path, nFER per bin."""
    bins = [b for b in BINS if any(r.snr_bin == b for r in table.rows)]
    head = ["Experiment", "Training Data", "Model / Inference Path"] + [f"nFER_{b}" for b in bins]
    lines = ["\t".join(head)]
    for exp in experiments:
        if table.get(exp, "all") is None:
            continue
        vals = []
        for b in bins:
            r = table.get(exp, b)
            vals.append("-" if r is None else ("inf" if math.isinf(r.normalized) else f"{r.normalized:.1f}"))
        lines.append("\t".join([exp, TRAINING_DATA[exp], DESCRIPTIONS[exp]] + vals))
    return "\n".join(lines) + "\n"


def _per_seed_reductions(per_seed, base_exp, exp):
    out = {}
    for b in BINS:
        vals = []
        for t in per_seed:
            rb, re_ = t.get(base_exp, b), t.get(exp, b)
            if rb is not None and re_ is not None:
                vals.append(relative_reduction(rb.frame_error_rate, re_.frame_error_rate))
        if vals:
            out[b] = {"per_seed": vals, "median": float(np.median(vals))}
    return out


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else "-inf" if x < 0 else "nan"
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def run_experiment_suite(suite, out_dir, data_dir=None, progress=None):
    """Train every model run for every seed, evaluate, and write the report.

    Each (run, seed) lives in ``out_dir/runs/<run>-s<seed>`` and is skipped
    on a rerun once finished, so an interrupted suite resumes where it
    stopped.  ``SUITE_INCOMPLETE`` sits in ``out_dir`` until the report is
    complete.  Returns the summary dict.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / INCOMPLETE_MARKER).write_text("suite has not finished; rerun the same command to resume\n")
    except OSError as exc:
        raise DataIOError(f"cannot write to {out}: {exc}") from exc
    data_dir = ensure_dataset(suite.sim, Path(data_dir) if data_dir else out / "data")
    jobs = [(run, seed) for seed in suite.seeds for run in suite.model_runs()]
    dirs = {j: out / "runs" / f"{j[0]}-s{j[1]}" for j in jobs}
    results = {}
    if suite.workers > 1:
        with ProcessPoolExecutor(max_workers=suite.workers) as pool:
            futs = {j: pool.submit(_run_one, j[0], j[1], suite, data_dir, dirs[j]) for j in jobs}
            for j in jobs:
                results[j] = futs[j].result()
                if progress:
                    progress(j)
    else:
        for j in jobs:
            results[j] = _run_one(j[0], j[1], suite, data_dir, dirs[j])
            if progress:
                progress(j)

    per_seed = []
    for seed in suite.seeds:
        rows = []
        for run in suite.model_runs():
            rows += results[(run, seed)].rows
        order = {e: i for i, e in enumerate(suite.experiments)}
        rows.sort(key=lambda r: (order[r.experiment_id], BINS.index(r.snr_bin)))
        per_seed.append(MetricsTable(rows))
    median = _median_table(per_seed, suite.experiments)
    exps = set(suite.experiments)
    summary = {"seeds": list(suite.seeds), "experiments": list(suite.experiments), "tables": {}, "comparisons": {}}
    files = {"metrics_median.tsv": median.to_tsv()}
    for seed, t in zip(suite.seeds, per_seed):
        files[f"metrics_seed{seed}.tsv"] = t.to_tsv()
    if {"E1", "E2"} <= exps:
        t1 = normalize_to_baseline(MetricsTable([r for r in median.rows if r.experiment_id in ("E1", "E2")]), "E1")
        files["table_unified_vs_zeropad.tsv"] = format_comparison(t1, ["E1", "E2"])
        summary["tables"]["unified_vs_zeropad"] = t1.to_dict()
        summary["comparisons"]["E2_vs_E1"] = _per_seed_reductions(per_seed, "E1", "E2")
    if "E3" in exps:
        others = [e for e in ("E3", "E4", "E5", "E6") if e in exps]
        t2 = normalize_to_baseline(MetricsTable([r for r in median.rows if r.experiment_id in others]), "E3")
        files["table_mc_vs_sc.tsv"] = format_comparison(t2, others)
        summary["tables"]["mc_vs_sc"] = t2.to_dict()
        chart = ["snr_bin\texperiment\tnormalized_fer"]
        for b in SNR_BINS:
            for e in others:
                r = t2.get(e, b)
                if r is not None:
                    chart.append(f"{b}\t{e}\t{_fmt(r.normalized)}")
        files["chart_snr_bins.tsv"] = "\n".join(chart) + "\n"
        for e in others[1:]:
            summary["comparisons"][f"{e}_vs_E3"] = _per_seed_reductions(per_seed, "E3", e)
    if {"E4", "E6"} <= exps:
        summary["comparisons"]["E6_vs_E4"] = _per_seed_reductions(per_seed, "E4", "E6")
    files["summary.json"] = json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n"
    try:
        for name, text in files.items():
            (out / name).write_text(text)
        (out / INCOMPLETE_MARKER).unlink()
    except OSError as exc:
        raise DataIOError(f"cannot write suite report under {out}: {exc}") from exc
    return summary
