"""Reclassification by synthesis.

The outer loop alternates two moves: sample pseudo-negatives from the
classifier's own implied negative distribution, then retrain the classifier
on the original data plus every pseudo-negative collected so far. The loop
covers the binary setting (loss: -sum ln q(y|x) over S minus sum ln q(-1|x)
over the store), the joint softmax multi-class setting (cross-entropy on S
weighted 1-alpha, plus alpha times a softplus that pushes the tagged class
logit down on pseudo-negatives), a one-vs-all ensemble of independent binary
members, a noise ablation whose "synthesis" is raw reference draws, and the
plain baseline trainer the regressions compare against.

Determinism: every random decision draws from a stream keyed by
(seed, stream id, round, ...), so runs with equal configs are bitwise equal.
"""

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as D
from . import network as N
from . import sampler as S
from . import tensor as T
from .seeding import (STREAM_EPOCH, STREAM_INIT, STREAM_MEMBER, STREAM_SYNTH,
                      rng)

Array = np.ndarray


class TrainerError(Exception):
    pass


class TrainingDivergedError(TrainerError):
    pass


@dataclass
class TrainConfig:
    rounds: int = 8                 # T
    pseudo_per_round: int = 50      # l (per class in multi-class)
    epochs_per_round: int = 5
    init_epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.025
    lr_drop_round: int = 25
    momentum: float = 0.9
    alpha: float = 0.1
    val_fraction: float = 0.1
    patience: int = 3
    seed: int = 0
    reinit_each_round: bool = False  # False: fine-tune the previous round's net
    keep_round_snapshots: bool = False

    def __post_init__(self):
        if self.rounds < 0 or self.pseudo_per_round < 0:
            raise TrainerError("rounds and pseudo_per_round must be nonnegative")
        # alpha = 0 is legal: the weighted loss reduces to the plain one
        if not 0.0 <= self.alpha < 1.0:
            raise TrainerError("alpha must lie in [0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainerError("val_fraction must lie in [0, 1)")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise TrainerError("batch_size and learning_rate must be positive")


@dataclass
class RoundMetrics:
    round: int
    epoch_losses: list[float]
    train_loss: float
    val_error: float
    val_loss: float
    store_size: int
    synth_steps_mean: float


@dataclass
class RunResult:
    classifier: object            # state after the last executed round
    selected: object              # best-validation snapshot
    metrics: list[RoundMetrics]
    store: D.PseudoNegativeStore
    stopped_round: int | None     # round at which patience fired, else None
    snapshots: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _binary_batch_graph(c: N.BinaryClassifier, x_s, y_s, x_pn):
    """Mean over the batch of -ln q(y|x) on S plus -ln q(-1|x) on the store
    slice; -ln sigmoid(z) is computed as softplus(-z)."""
    n_s = 0 if x_s is None else x_s.shape[0]
    n_pn = 0 if x_pn is None else x_pn.shape[0]
    if n_s + n_pn == 0:
        raise TrainerError("empty training batch")
    record = T.ComputationRecord()
    p_nodes = [record.leaf(p, "param") for p in c.all_params()]
    feat_nodes, head_w, head_b = p_nodes[:-2], p_nodes[-2], p_nodes[-1]
    parts = []
    if n_s:
        feats = T.build_feature_graph(record, c.spec, feat_nodes,
                                      record.leaf(x_s, "const"))
        logits = record.reshape(record.affine(feats, head_w, head_b), (n_s,))
        parts.append(record.sum(record.softplus(
            record.mul_const(logits, -np.asarray(y_s, dtype=np.float64)))))
    if n_pn:
        feats = T.build_feature_graph(record, c.spec, feat_nodes,
                                      record.leaf(x_pn, "const"))
        logits = record.reshape(record.affine(feats, head_w, head_b), (n_pn,))
        parts.append(record.sum(record.softplus(logits)))
    total = parts[0] if len(parts) == 1 else record.add(parts[0], parts[1])
    return record, record.scale(total, 1.0 / (n_s + n_pn))


def _multiclass_batch_graph(c: N.MulticlassClassifier, x_s, y_s, x_pn, tags, alpha):
    """Mean over the batch of (1-alpha) cross-entropy on S plus alpha times
    softplus of the tagged class logit on pseudo-negatives."""
    n_s = 0 if x_s is None else x_s.shape[0]
    n_pn = 0 if x_pn is None else x_pn.shape[0]
    if n_s + n_pn == 0:
        raise TrainerError("empty training batch")
    record = T.ComputationRecord()
    p_nodes = [record.leaf(p, "param") for p in c.all_params()]
    feat_nodes, head_w, head_b = p_nodes[:-2], p_nodes[-2], p_nodes[-1]
    parts = []
    if n_s:
        y_s = np.asarray(y_s)
        if y_s.min() < 0 or y_s.max() >= c.n_classes:
            raise TrainerError(f"labels outside 0..{c.n_classes - 1}")
        feats = T.build_feature_graph(record, c.spec, feat_nodes,
                                      record.leaf(x_s, "const"))
        logits = record.affine(feats, head_w, head_b)
        picked = record.select(record.log_softmax(logits), y_s)
        parts.append(record.scale(record.sum(picked), -(1.0 - alpha)))
    if n_pn:
        tags = np.asarray(tags)
        if tags.min() < 0 or tags.max() >= c.n_classes:
            raise TrainerError(f"pseudo-negative tag outside 0..{c.n_classes - 1}")
        feats = T.build_feature_graph(record, c.spec, feat_nodes,
                                      record.leaf(x_pn, "const"))
        logits = record.affine(feats, head_w, head_b)
        sel = record.select(logits, tags)
        parts.append(record.scale(record.sum(record.softplus(sel)), alpha))
    total = parts[0] if len(parts) == 1 else record.add(parts[0], parts[1])
    return record, record.scale(total, 1.0 / (n_s + n_pn))


def binary_icn_loss(c: N.BinaryClassifier, x_s, y_s, x_pn=None) -> float:
    """Value of the binary objective (a sum, not a mean) on full arrays."""
    n_s = 0 if x_s is None else len(x_s)
    if n_s == 0:
        raise TrainerError("the supervised batch may not be empty")
    logit = N.logit_binary(c, x_s)
    total = T.softplus_value(-np.asarray(y_s, dtype=np.float64) * logit).sum()
    if x_pn is not None and len(x_pn):
        total += T.softplus_value(N.logit_binary(c, x_pn)).sum()
    return float(total)


def multiclass_icn_loss(c: N.MulticlassClassifier, x_s, y_s, x_pn, tags,
                        alpha: float) -> float:
    """Value of the integrated multi-class objective (a sum) on full arrays."""
    y_s = np.asarray(y_s)
    if y_s.size and (y_s.min() < 0 or y_s.max() >= c.n_classes):
        raise TrainerError(f"labels outside 0..{c.n_classes - 1}")
    total = 0.0
    if y_s.size:
        log_probs = T.log_softmax_value(N.class_logits(c, x_s))
        total += (1.0 - alpha) * float(-log_probs[np.arange(y_s.size), y_s].sum())
    if x_pn is not None and len(x_pn):
        tags = np.asarray(tags)
        if tags.min() < 0 or tags.max() >= c.n_classes:
            raise TrainerError(f"pseudo-negative tag outside 0..{c.n_classes - 1}")
        logits = N.class_logits(c, x_pn)
        total += alpha * float(T.softplus_value(
            logits[np.arange(tags.size), tags]).sum())
    return float(total)


# ---------------------------------------------------------------------------
# SGD epochs over the union of S and the store
# ---------------------------------------------------------------------------

def _sgd_epochs(c, x_s, y_s, x_pn, tags, alpha, lr, epochs, config: TrainConfig,
                gen: np.random.Generator) -> list[float]:
    """Momentum SGD over shuffled unions of S and pseudo-negatives; returns
    the per-epoch mean loss trace. Momentum buffers are fresh per call."""
    n_s = x_s.shape[0]
    n_pn = 0 if x_pn is None else x_pn.shape[0]
    n_total = n_s + n_pn
    params = c.all_params()
    velocity = [np.zeros_like(p) for p in params]
    losses = []
    for epoch in range(epochs):
        order = gen.permutation(n_total)
        epoch_sum = 0.0
        for at in range(0, n_total, config.batch_size):
            batch = order[at:at + config.batch_size]
            s_rows = batch[batch < n_s]
            pn_rows = batch[batch >= n_s] - n_s
            bx = x_s[s_rows] if s_rows.size else None
            by = y_s[s_rows] if s_rows.size else None
            px = x_pn[pn_rows] if pn_rows.size else None
            pt = tags[pn_rows] if pn_rows.size and tags is not None else None
            try:
                if isinstance(c, N.BinaryClassifier):
                    record, loss = _binary_batch_graph(c, bx, by, px)
                else:
                    record, loss = _multiclass_batch_graph(c, bx, by, px, pt, alpha)
                grads = T.param_gradients(record, loss)
            except T.NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, sample offset {at}: {exc}"
                ) from None
            epoch_sum += float(loss.value) * batch.size
            for p, g, v in zip(params, grads, velocity):
                v *= config.momentum
                v -= lr * g
                p += v
        losses.append(epoch_sum / n_total)
    return losses


def reclassification_step(c, x_s, y_s, store: D.PseudoNegativeStore,
                          config: TrainConfig, round_t: int,
                          gen: np.random.Generator) -> list[float]:
    """One round's retraining on S union S_pn. The learning rate drops by 10x
    from lr_drop_round on; alpha weighting applies only to the multi-class
    integrated loss. Returns the per-epoch loss trace."""
    lr = config.learning_rate / (10.0 if round_t >= config.lr_drop_round else 1.0)
    if isinstance(c, N.BinaryClassifier):
        x_pn = store.samples_for() if len(store) else None
        tags = None
    else:
        x_pn = store.samples_for() if len(store) else None
        tags = (np.array([e.class_tag for e in store.entries], dtype=np.int64)
                if len(store) else None)
    return _sgd_epochs(c, x_s, y_s, x_pn, tags, config.alpha, lr,
                       config.epochs_per_round, config, gen)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def binary_error(c: N.BinaryClassifier, x, y, chunk: int = 256) -> float:
    wrong = 0
    for at in range(0, len(x), chunk):
        logits = N.logit_binary(c, x[at:at + chunk])
        pred = np.where(logits > 0, 1, -1)
        wrong += int((pred != y[at:at + chunk]).sum())
    return wrong / len(x)


def multiclass_error(model, x, y, chunk: int = 256) -> float:
    wrong = 0
    for at in range(0, len(x), chunk):
        pred = N.predict_label(model, x[at:at + chunk])
        wrong += int((pred != y[at:at + chunk]).sum())
    return wrong / len(x)


def _val_stats(c, x, y) -> tuple[float, float]:
    """(error, mean plain loss) on a held-out set; alpha plays no role here."""
    if len(x) == 0:
        return float("nan"), float("nan")
    if isinstance(c, N.BinaryClassifier):
        return binary_error(c, x, y), binary_icn_loss(c, x, y) / len(x)
    return (multiclass_error(c, x, y),
            multiclass_icn_loss(c, x, y, None, None, 0.0) / len(x))


# ---------------------------------------------------------------------------
# the outer loop
# ---------------------------------------------------------------------------

def _init_classifier(spec, input_shape, mode, n_classes, config):
    gen = rng(config.seed, STREAM_INIT)
    if mode == "binary":
        return N.init_binary(spec, input_shape, gen)
    return N.init_multiclass(spec, input_shape, n_classes, gen)


def _snapshot(c):
    return [p.copy() for p in c.all_params()]


def _with_params(c, params):
    out = copy.copy(c)
    out.set_params([p.copy() for p in params])
    return out


def with_params(c, params):
    """A copy of classifier c carrying the given parameter snapshot."""
    return _with_params(c, params)


def _default_synthesizer(sampler_config: S.SamplerConfig, input_shape):
    def synthesize(classifier, count, gen, class_index=None):
        samples, traces = S.synthesize_pseudo_negatives(
            classifier, sampler_config, count, gen, input_shape,
            class_index=class_index)
        return samples, traces
    return synthesize


def noise_synthesizer(sampler_config: S.SamplerConfig, input_shape):
    """Ablation source: reference draws stand in for synthesis."""
    def synthesize(classifier, count, gen, class_index=None):
        return S.draw_reference(count, input_shape,
                                sampler_config.reference_sigma, gen), None
    return synthesize


def run_reclassification_by_synthesis(ds: D.LabeledDataset, spec,
                                      config: TrainConfig,
                                      sampler_config: S.SamplerConfig | None = None,
                                      mode: str = "binary",
                                      synthesize=None) -> RunResult:
    """Full training loop: initial classifier on S, then `rounds` rounds of
    synthesize / augment / retrain with validation-based early stopping."""
    if mode not in ("binary", "multiclass"):
        raise TrainerError(f"unknown mode {mode!r}")
    if len(ds) == 0:
        raise TrainerError("empty training set")
    if mode == "binary" and len(np.unique(ds.labels)) < 2:
        raise TrainerError("binary mode needs both labels present")
    input_shape = ds.samples.shape[1:]
    if synthesize is None:
        sampler_config = sampler_config or S.SamplerConfig()
        synthesize = _default_synthesizer(sampler_config, input_shape)

    n_val = int(round(config.val_fraction * len(ds)))
    if n_val > 0:
        train_ds, val_ds = D.split_dataset(ds, [len(ds) - n_val], config.seed)
    else:
        train_ds, val_ds = ds, ds.subset([])
    x_s, y_s = train_ds.samples, train_ds.labels
    n_classes = ds.class_count

    c = _init_classifier(spec, input_shape, mode, n_classes, config)
    init_losses = _sgd_epochs(c, x_s, y_s, None, None, 0.0,
                              config.learning_rate, config.init_epochs, config,
                              rng(config.seed, STREAM_EPOCH, 0))
    store = D.PseudoNegativeStore()
    val_error, val_loss = _val_stats(c, val_ds.samples, val_ds.labels)
    metrics = [RoundMetrics(0, init_losses,
                            init_losses[-1] if init_losses else float("nan"),
                            val_error, val_loss, 0, float("nan"))]
    snapshots = [_snapshot(c)] if config.keep_round_snapshots else []
    best_params = _snapshot(c)
    best_error = val_error
    rounds_since_best = 0
    stopped_round = None

    for t in range(1, config.rounds + 1):
        if mode == "binary":
            samples, traces = synthesize(c, config.pseudo_per_round,
                                         rng(config.seed, STREAM_SYNTH, t))
            store.add_batch(t, -1, samples)
            all_traces = traces
        else:
            all_traces = []
            for k in range(n_classes):
                samples, traces = synthesize(c, config.pseudo_per_round,
                                             rng(config.seed, STREAM_SYNTH, t, k),
                                             class_index=k)
                store.add_batch(t, k, samples)
                if traces:
                    all_traces.extend(traces)
        if config.reinit_each_round:
            c = _init_classifier(spec, input_shape, mode, n_classes, config)
        losses = reclassification_step(c, x_s, y_s, store, config, t,
                                       rng(config.seed, STREAM_EPOCH, t))
        val_error, val_loss = _val_stats(c, val_ds.samples, val_ds.labels)
        steps_mean = (float(np.mean([tr.steps for tr in all_traces]))
                      if all_traces else float("nan"))
        metrics.append(RoundMetrics(t, losses,
                                    losses[-1] if losses else float("nan"),
                                    val_error, val_loss, len(store), steps_mean))
        if config.keep_round_snapshots:
            snapshots.append(_snapshot(c))
        if len(val_ds) and np.isfinite(val_error):
            if val_error < best_error - 1e-12:
                best_error = val_error
                best_params = _snapshot(c)
                rounds_since_best = 0
            else:
                rounds_since_best += 1
                if rounds_since_best >= config.patience:
                    stopped_round = t
                    break
        else:
            best_params = _snapshot(c)

    return RunResult(c, _with_params(c, best_params), metrics, store,
                     stopped_round, snapshots)


def baseline_train(ds: D.LabeledDataset, spec, config: TrainConfig,
                   mode: str = "binary") -> RunResult:
    """Plain training on S alone: exactly the initial phase of the loop, so a
    rounds=0 run must reproduce it bitwise."""
    no_rounds = replace(config, rounds=0)
    return run_reclassification_by_synthesis(ds, spec, no_rounds, mode=mode)


def train_icn_noise_ablation(ds: D.LabeledDataset, spec, config: TrainConfig,
                             sampler_config: S.SamplerConfig | None = None,
                             mode: str = "binary") -> RunResult:
    """Same loop, but pseudo-negatives are raw reference draws."""
    sampler_config = sampler_config or S.SamplerConfig()
    return run_reclassification_by_synthesis(
        ds, spec, config, sampler_config, mode,
        synthesize=noise_synthesizer(sampler_config, ds.samples.shape[1:]))


# ---------------------------------------------------------------------------
# one-vs-all
# ---------------------------------------------------------------------------

@dataclass
class OneVsAllResult:
    ensemble: N.OneVsAllEnsemble
    member_results: list[RunResult]
    store: D.PseudoNegativeStore   # merged, entries retagged with their class


def member_seed(seed: int, class_index: int) -> int:
    """Deterministic per-member seed; members are fully independent."""
    ss = np.random.SeedSequence([seed, STREAM_MEMBER, class_index])
    return int(ss.generate_state(1)[0])


def train_one_vs_all_ensemble(ds: D.LabeledDataset, spec, config: TrainConfig,
                              sampler_config: S.SamplerConfig | None = None,
                              synthesize=None) -> OneVsAllResult:
    """K independent binary runs, class k versus the rest, merged by argmax."""
    classes = np.arange(ds.class_count)
    counts = np.bincount(ds.labels, minlength=ds.class_count)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise TrainerError(f"no training samples for class {missing[0]}")
    members, results = [], []
    merged = D.PseudoNegativeStore()
    for k in classes:
        relabeled = D.LabeledDataset(
            ds.samples, np.where(ds.labels == k, 1, -1), 2)
        cfg = replace(config, seed=member_seed(config.seed, int(k)))
        result = run_reclassification_by_synthesis(
            relabeled, spec, cfg, sampler_config, "binary", synthesize)
        members.append(result.selected)
        results.append(result)
        for e in result.store.entries:
            merged.entries.append(D.StoreEntry(e.round, int(k), e.sample))
    return OneVsAllResult(N.OneVsAllEnsemble(members), results, merged)
