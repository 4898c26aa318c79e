"""Episodic objective, SGD schedule, evaluation protocol, and repetitions."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import variants
from .data import Corpus, EmbeddingTable, sample_episode
from .encoder import encode_instance
from .matching import aggregate_prototype, class_score, encode_pair
from .params import ModelDims, ParameterSet


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite during optimization."""


@dataclass
class TrainConfig:
    """Everything needed to reproduce one training run."""
    n_train: int = 20          # classes per training episode
    n_eval: int = 5            # classes per evaluation episode
    k: int = 5                 # support instances per class
    r: int = 5                 # queries per training episode
    lr: float = 0.1
    decay_every: int = 20000   # learning rate x0.1 after this many steps
    lam: float = 1.0           # weight of the support-consistency penalty
    dropout: float = 0.2
    max_steps: int = 50000
    eval_every: int = 1000
    eval_episodes: int = 1000
    seed: int = 0
    loss_form: str = "as_written"  # or "nll"
    ablation_id: int = 1
    # model dimensions
    d_w: int = 50
    d_p: int = 5
    d_c: int = 200
    d_h: int = 100
    window: int = 3
    max_dist: int = 40
    # paths (used by the command-line driver)
    train_data: str = ""
    dev_data: str = ""
    embeddings: str = ""
    out_dir: str = "."
    reps: int = 1

    def __post_init__(self):
        positive = ["n_train", "n_eval", "k", "r", "lr", "decay_every",
                    "max_steps", "eval_every", "eval_episodes",
                    "d_w", "d_p", "d_c", "d_h", "window", "max_dist", "reps"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.lam < 0 or not 0 <= self.dropout < 1:
            raise ValueError("lam must be >= 0 and dropout in [0, 1)")
        if self.loss_form not in ("as_written", "nll"):
            raise ValueError(f"loss_form must be as_written or nll, got {self.loss_form!r}")
        variants.from_id(self.ablation_id)

    @property
    def dims(self) -> ModelDims:
        return ModelDims(d_w=self.d_w, d_p=self.d_p, d_c=self.d_c, d_h=self.d_h,
                         window=self.window, max_dist=self.max_dist)

    @property
    def variant(self) -> variants.AblationSpec:
        return variants.from_id(self.ablation_id)


@dataclass
class QueryForward:
    """Forward results for one query against all N classes."""
    label: int
    scores: ad.Tensor   # (N,)
    probs: ad.Tensor    # (N,), softmax of scores
    bundles: list       # per class: (SupportBundle, prototype, attn weights)

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.scores.data))


def episode_forward(episode, params: ParameterSet, embeddings: EmbeddingTable,
                    spec: variants.AblationSpec, training: bool, rng,
                    dropout_rate: float = 0.2):
    """Score every query against every class's support set."""
    support_ctx = [
        [encode_instance(inst, embeddings, params.encoder, params.dims,
                         training, rng, dropout_rate) for inst in row]
        for row in episode.support
    ]
    tied = spec.tying == "shared"
    results = []
    for q_inst, label in episode.queries:
        q_ctx = encode_instance(q_inst, embeddings, params.encoder, params.dims,
                                training, rng, dropout_rate)
        scores, bundles = [], []
        for ctxs in support_ctx:
            q_hat, bundle = encode_pair(q_ctx, ctxs, params.match,
                                        variant=spec.lm_variant, training=training,
                                        rng=rng, dropout_rate=dropout_rate)
            proto, weights = aggregate_prototype(bundle.s_hats, q_hat,
                                                 params.match, spec.ia_mode)
            scores.append(class_score(proto, q_hat, params.match,
                                      spec.cm_metric, tied=tied))
            bundles.append((bundle, proto, weights))
        score_vec = ad.stack(scores)
        results.append(QueryForward(label, score_vec,
                                    ad.softmax(score_vec, axis=0), bundles))
    return results


def loss_match(results, loss_form: str = "as_written") -> ad.Tensor:
    """Episode classification loss over the query set.

    as_written: negative mean probability of the true class.
    nll: negative mean log-probability (conventional cross entropy).
    """
    terms = []
    for qf in results:
        if loss_form == "nll":
            # log-softmax straight from the scores; the softmax output can
            # underflow to exactly 0 once the model is confident
            terms.append(ad.sub(ad.element(qf.scores, qf.label),
                                ad.logsumexp(qf.scores)))
        else:
            terms.append(ad.element(qf.probs, qf.label))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, -1.0 / len(results))


def loss_incon(results) -> ad.Tensor:
    """Mean squared distance between support vectors and their prototype.

    Averaged over classes, support instances, and queries (prototypes are
    query-conditioned, so each query contributes its own set).
    """
    terms = []
    count = 0
    for qf in results:
        for bundle, proto, _ in qf.bundles:
            for s_k in bundle.s_hats:
                terms.append(ad.sq_l2(ad.sub(s_k, proto)))
                count += 1
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / count)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    return cfg.lr * 0.1 ** (step // cfg.decay_every)


def train_step(params: ParameterSet, episode, embeddings, cfg: TrainConfig,
               step: int, rng) -> dict:
    """One episode forward/backward/SGD update; returns scalar metrics."""
    spec = cfg.variant
    results = episode_forward(episode, params, embeddings, spec,
                              training=True, rng=rng, dropout_rate=cfg.dropout)
    j_match = loss_match(results, cfg.loss_form)
    j_incon = loss_incon(results)
    loss = j_match if cfg.lam == 0.0 else ad.add(j_match, ad.scale(j_incon, cfg.lam))
    values = {"J_match": j_match.item(), "J_incon": j_incon.item(),
              "J": loss.item()}
    if not all(np.isfinite(v) for v in values.values()):
        norms = {name: float(np.linalg.norm(p.data))
                 for name, p in params.named_parameters().items()}
        raise TrainingDivergedError(
            f"non-finite loss at step {step}: {values}; parameter norms {norms}")
    lr = learning_rate(cfg, step)
    ad.backward(loss)
    ad.sgd_step(params.parameters(), lr)
    values["lr"] = lr
    values["step"] = step
    return values


def evaluate(params: ParameterSet, embeddings, corpus: Corpus, n_way: int,
             k_shot: int, episodes_count: int, seed: int,
             spec: variants.AblationSpec = None):
    """Accuracy over single-query episodes; deterministic given the seed."""
    spec = spec or variants.from_id(1)
    rng = np.random.default_rng(seed)
    records = []
    correct = 0
    with ad.no_grad():
        for _ in range(episodes_count):
            episode = sample_episode(corpus, n_way, k_shot, 1, rng)
            (qf,) = episode_forward(episode, params, embeddings, spec,
                                    training=False, rng=None, dropout_rate=0.0)
            correct += qf.predicted == qf.label
            records.append({"true": qf.label, "predicted": qf.predicted,
                            "scores": qf.scores.data.tolist()})
    return correct / episodes_count, records


def _format_metrics(values: dict) -> str:
    parts = [f"step={values['step']}"]
    for key in ("lr", "J_match", "J_incon", "J", "eval_acc"):
        if key in values:
            parts.append(f"{key}={format(values[key], '.17g')}")
    return " ".join(parts)


@dataclass
class TrainResult:
    params: ParameterSet
    best_accuracy: float
    final_accuracy: float
    history: list = field(default_factory=list)


def train_model(cfg: TrainConfig, train_corpus: Corpus, dev_corpus: Corpus,
                embeddings: EmbeddingTable, metrics_out=None) -> TrainResult:
    """Full optimization loop with best-on-validation parameter selection."""
    params = ParameterSet.init(cfg.dims, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    eval_seed = cfg.seed + 7919  # fixed, so every checkpoint sees the same episodes
    spec = cfg.variant
    history = []
    best_acc, best_state = -1.0, None

    def emit(values):
        history.append(values)
        if metrics_out is not None:
            metrics_out.write(_format_metrics(values) + "\n")

    def run_eval(step):
        nonlocal best_acc, best_state
        acc, _ = evaluate(params, embeddings, dev_corpus, cfg.n_eval, cfg.k,
                          cfg.eval_episodes, eval_seed, spec)
        emit({"step": step, "eval_acc": acc})
        if acc > best_acc:
            best_acc = acc
            best_state = {name: p.data.copy()
                          for name, p in params.named_parameters().items()}
        return acc

    for step in range(cfg.max_steps):
        episode = sample_episode(train_corpus, cfg.n_train, cfg.k, cfg.r, rng)
        emit(train_step(params, episode, embeddings, cfg, step, rng))
        if (step + 1) % cfg.eval_every == 0:
            run_eval(step + 1)
    if cfg.max_steps % cfg.eval_every != 0:
        run_eval(cfg.max_steps)
    final_acc = next(h["eval_acc"] for h in reversed(history) if "eval_acc" in h)

    if best_state is not None:
        for name, p in params.named_parameters().items():
            p.data[...] = best_state[name]
        params.zero_grads()
    return TrainResult(params, best_acc, final_acc, history)


@dataclass
class RepetitionReport:
    accuracies: list
    results: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))


def run_repetitions(cfg: TrainConfig, train_corpus, dev_corpus, embeddings,
                    reps: int = None, metrics_out_factory=None) -> RepetitionReport:
    """Train `reps` independent models on seeds seed+0 .. seed+reps-1."""
    reps = cfg.reps if reps is None else reps
    if reps < 1:
        raise ValueError("reps must be >= 1")
    results = []
    for i in range(reps):
        run_cfg = dataclasses.replace(cfg, seed=cfg.seed + i)
        metrics_out = metrics_out_factory(i) if metrics_out_factory else None
        try:
            results.append(train_model(run_cfg, train_corpus, dev_corpus,
                                       embeddings, metrics_out))
        finally:
            if metrics_out is not None:
                metrics_out.close()
    return RepetitionReport([r.best_accuracy for r in results], results)
