"""Mixed SC/MC training with gradient routing.

Each batch mixes SC and MC utterances.  Every item is pushed through the
frontend for its input type, so SC items produce gradients only for
``sc_fe`` + ``backend`` and MC items only for ``mc_fe`` + ``backend``.  The
optimizer then steps exactly the tensors that received a gradient; a
partition no item reached is left bit-for-bit alone, optimizer moments
included.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import DatasetManifest
from .errors import ConfigError, DataIOError, InvalidInputError, NumericalError
from .features import compute_gmv_stats
from .model import PARTITIONS, UnifiedModel
from .signal_sim import strip_auxiliary

log = logging.getLogger(__name__)

SC, MC = "SC", "MC"
DERIVED_SUFFIX = "-scderived"


@dataclass
class TrainingConfig:
    batch_size: int = 16
    mix_policy: str = "proportional"  # or "fixed_ratio"
    sc_ratio: float = 0.5  # fraction of SC items per batch under fixed_ratio
    derive_sc_from_mc: bool = True
    epochs: int = 5
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mix_policy not in ("proportional", "fixed_ratio"):
            raise ConfigError(f"unknown mix policy {self.mix_policy!r}")
        if not 0.0 <= self.sc_ratio <= 1.0:
            raise ConfigError("sc_ratio must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ConfigError("epochs and learning_rate must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingBatch:
    items: list  # of (MultiChannelUtterance, SC | MC)

    def __post_init__(self):
        for utt, kind in self.items:
            if kind == MC and not utt.is_multichannel:
                raise InvalidInputError(f"{utt.utterance_id}: MC item without auxiliary channels")

    def __len__(self):
        return len(self.items)


def derive_sc_from_mc(mc):
    """Drop the auxiliary channels of an MC utterance, keeping everything else."""
    if not mc.is_multichannel:
        raise InvalidInputError(f"{mc.utterance_id}: already single-channel")
    return strip_auxiliary(mc, DERIVED_SUFFIX)


def _utterances(source):
    if source is None:
        return []
    if isinstance(source, DatasetManifest):
        return list(source)
    return list(source)


def _epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0xBA7C4]))


def build_batches(sc_source, mc_source, config, seed=None, epoch=0):
    """Batches for one epoch; a pure function of (sources, config, seed, epoch)."""
    seed = config.seed if seed is None else seed
    sc = [(u, SC) for u in _utterances(sc_source)]
    mc_utts = _utterances(mc_source)
    mc = [(u, MC) for u in mc_utts]
    if config.derive_sc_from_mc:
        sc += [(derive_sc_from_mc(u), SC) for u in mc_utts]
    rng = _epoch_rng(seed, epoch)
    bs = config.batch_size
    if config.mix_policy == "proportional":
        pool = sc + mc
        if not pool:
            raise ConfigError("no training data")
        order = rng.permutation(len(pool))
        items = [pool[i] for i in order]
        return [TrainingBatch(items[i : i + bs]) for i in range(0, len(items), bs)]
    r = config.sc_ratio
    if r > 0 and not sc:
        raise ConfigError(f"fixed_ratio({r}) needs SC data but none is available")
    if r < 1 and not mc:
        raise ConfigError(f"fixed_ratio({r}) needs MC data but none is available")
    n_sc = int(round(r * bs))
    n_mc = bs - n_sc
    needed = len(sc) if r == 1 else len(mc) if r == 0 else len(sc) + len(mc)
    n_batches = -(-needed // bs)
    sc_order = rng.permutation(len(sc)) if sc else []
    mc_order = rng.permutation(len(mc)) if mc else []
    batches = []
    for b in range(n_batches):
        items = [sc[sc_order[(b * n_sc + j) % len(sc)]] for j in range(n_sc)]
        items += [mc[mc_order[(b * n_mc + j) % len(mc)]] for j in range(n_mc)]
        batches.append(TrainingBatch(items))
    return batches


class OptimizerState:
    """Adam moments (or nothing, for SGD) and step counts, per tensor name."""

    def __init__(self, params, config):
        self.config = config
        self.m = {n: np.zeros_like(params[n]) for n in params}
        self.v = {n: np.zeros_like(params[n]) for n in params}
        self.steps = dict.fromkeys(params, 0)

    def names(self):
        return set(self.m)

    def apply(self, params, grads):
        cfg = self.config
        lr = cfg.learning_rate
        for name in sorted(grads):
            g = grads[name]
            p = params.tensors[name]
            if cfg.optimizer == "sgd":
                p -= lr * g
                continue
            self.steps[name] += 1
            t = self.steps[name]
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            mhat = m / (1 - cfg.beta1**t)
            vhat = v / (1 - cfg.beta2**t)
            p -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
        params.version += 1


class ItemCache:
    """Prepared (feature-extracted) items keyed by utterance id and path."""

    def __init__(self, model):
        self.model = model
        self._items = {}

    def get(self, utt):
        path = self.model.route(utt)
        key = (utt.utterance_id, path)
        if key not in self._items:
            self._items[key] = self.model.prepare(utt, path)
        return self._items[key]


def grad_norms(grads, params):
    sq = dict.fromkeys(PARTITIONS, 0.0)
    for name in sorted(grads):
        sq[params.partition_of[name]] += float(np.sum(grads[name] ** 2))
    return {k: float(np.sqrt(v)) for k, v in sq.items()}


def train_step(model, opt_state, batch, config=None, cache=None):
    """One optimizer step on ``batch``; returns (loss, grad norms per partition)."""
    cache = cache or ItemCache(model)
    items = [cache.get(utt) for utt, _ in batch.items]
    loss, item_losses, grads = model.loss_and_grads(items)
    allowed = {"backend"} | {"sc_fe" if it.path == "sc" else "mc_fe" for it in items}
    stray = sorted(n for n in grads if model.params.partition_of[n] not in allowed)
    if stray:
        raise RuntimeError(f"gradient routing violated: {stray[0]} got a gradient from an unrelated batch")
    for it, l in zip(items, item_losses):
        if not np.isfinite(l):
            raise NumericalError(f"non-finite loss {l} on item {it.utterance_id}")
    norms = grad_norms(grads, model.params)
    opt_state.apply(model.params, grads)
    return loss, norms


LOG_HEADER = "epoch\tstep\tloss\tgrad_norm_sc_fe\tgrad_norm_mc_fe\tgrad_norm_backend"


def _log_line(epoch, step, loss, norms):
    return "\t".join([str(epoch), str(step), repr(float(loss))] + [repr(norms[p]) for p in PARTITIONS])


def train(model_config, train_config, sc_source=None, mc_source=None, out_dir=None, stats=None, progress=None):
    """Train from scratch; returns (model, log lines).

    With ``out_dir`` the final checkpoint (``model.ckpt``) and the log
    (``train_log.tsv``) are written there.
    """
    from .checkpoint import save_checkpoint

    sc_utts = _utterances(sc_source)
    mc_utts = _utterances(mc_source)
    if not sc_utts and not mc_utts:
        raise ConfigError("no training data")
    if stats is None:
        stats = compute_gmv_stats(sc_utts + mc_utts)
    model = UnifiedModel.create(model_config, seed=train_config.seed, stats=stats)
    opt = OptimizerState(model.params.tensors, train_config)
    cache = ItemCache(model)
    lines = [LOG_HEADER]
    step = 0
    for epoch in range(train_config.epochs):
        batches = build_batches(sc_utts, mc_utts, train_config, train_config.seed, epoch)
        losses = []
        norm_sum = dict.fromkeys(PARTITIONS, 0.0)
        for batch in batches:
            loss, norms = train_step(model, opt, batch, train_config, cache)
            losses.append(loss)
            for p in PARTITIONS:
                norm_sum[p] += norms[p]
            lines.append(_log_line(epoch, step, loss, norms))
            step += 1
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        lines.append(_log_line(epoch, "mean", mean_loss, {p: norm_sum[p] / max(len(losses), 1) for p in PARTITIONS}))
        log.info("epoch %d mean loss %.4f", epoch, mean_loss)
        if progress:
            progress(epoch, mean_loss)
    if out_dir is not None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "train_log.tsv").write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise DataIOError(f"cannot write training log under {out}: {exc}") from exc
        save_checkpoint(model, out / "model.ckpt")
    return model, lines
