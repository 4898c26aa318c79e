"""Command-line experiment driver: train, eval, ablate, distance, heatmap."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import autodiff as ad
from . import data as datamod
from . import variants
from .data import load_corpus, load_embeddings, sample_episode
from .encoder import encode_instance
from .matching import encode_pair
from .params import CheckpointError, ParameterSet
from .training import (TrainConfig, TrainingDivergedError, evaluate,
                       run_repetitions)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(ValueError):
    """A config file or CLI flag combination is invalid."""


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment."""
    values = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    return values


def build_config(file_values: dict, overrides: dict) -> TrainConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = _CONFIG_FIELDS[key]
        try:
            if ftype in ("int", int):
                kwargs[key] = int(value)
            elif ftype in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = str(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    try:
        return TrainConfig(**kwargs)
    except (ValueError, variants.VariantError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_inputs(cfg: TrainConfig):
    train = load_corpus(cfg.train_data, "train")
    dev = load_corpus(cfg.dev_data, "dev")
    datamod.check_label_disjoint(train, dev)
    vocab = datamod.build_vocab(train, dev)
    embeddings = load_embeddings(cfg.embeddings, vocab, dim=cfg.d_w)
    return train, dev, embeddings


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = build_config(parse_config_file(args.config), _config_overrides(args))
    train, dev, embeddings = _load_inputs(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)

    def metrics_factory(i):
        return open(os.path.join(cfg.out_dir, f"metrics_rep{i}.log"), "w",
                    encoding="utf-8")

    report = run_repetitions(cfg, train, dev, embeddings,
                             metrics_out_factory=metrics_factory)
    for i, result in enumerate(report.results):
        result.params.save(os.path.join(cfg.out_dir, f"model_rep{i}.ckpt"))
    lines = [f"repetitions: {len(report.accuracies)}",
             f"accuracies: {' '.join(format(a, '.6f') for a in report.accuracies)}",
             f"mean: {report.mean:.6f}",
             f"std: {report.std:.6f}"]
    with open(os.path.join(cfg.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    params = ParameterSet.load(args.checkpoint)
    corpus = load_corpus(args.data, "eval")
    vocab = datamod.build_vocab(corpus)
    embeddings = load_embeddings(args.embeddings, vocab, dim=params.dims.d_w)
    spec = variants.from_id(args.ablation_id)
    if spec.tying == "untied":
        params.sync_untied()
    acc, records = evaluate(params, embeddings, corpus, args.n, args.k,
                            args.episodes, args.seed, spec)
    print(f"accuracy: {acc:.6f} over {args.episodes} episodes "
          f"({args.n}-way {args.k}-shot)")
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            for rec in records:
                scores = " ".join(format(s, ".17g") for s in rec["scores"])
                fh.write(f"true={rec['true']} predicted={rec['predicted']} "
                         f"scores={scores}\n")
    return 0


def cmd_ablate(args) -> int:
    ids = sorted({int(s) for s in args.ids.split(",")})
    for i in ids:
        variants.from_id(i)  # validates the range
    base = build_config(parse_config_file(args.config), _config_overrides(args))
    train, dev, embeddings = _load_inputs(base)
    os.makedirs(base.out_dir, exist_ok=True)
    rows = []
    for ablation_id in ids:
        cfg = dataclasses.replace(base, ablation_id=ablation_id)
        report = run_repetitions(cfg, train, dev, embeddings)
        for i, result in enumerate(report.results):
            result.params.save(os.path.join(
                cfg.out_dir, f"model_ablation{ablation_id}_rep{i}.ckpt"))
        rows.append((ablation_id, report.mean, report.std))
    table = ["id\tmean\tstd"]
    table += [f"{i}\t{mean:.6f}\t{std:.6f}" for i, mean, std in rows]
    text = "\n".join(table)
    with open(os.path.join(base.out_dir, "ablation_table.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def support_spread(class_vectors) -> float:
    """2/(N K (K-1)) * sum of pairwise squared distances within each class."""
    n_way = len(class_vectors)
    k_shot = len(class_vectors[0])
    if k_shot < 2:
        raise ConfigError("support spread needs k >= 2 (no pairs otherwise)")
    d_sum = 0.0
    for vecs in class_vectors:
        for a in range(k_shot):
            for b in range(a + 1, k_shot):
                d_sum += float(((np.asarray(vecs[a]) - np.asarray(vecs[b])) ** 2).sum())
    return 2.0 * d_sum / (n_way * k_shot * (k_shot - 1))


def distance_statistic(params: ParameterSet, embeddings, corpus, n_way: int,
                       k_shot: int, sets_count: int, seed: int,
                       spec: variants.AblationSpec = None) -> float:
    """Mean pairwise squared distance among same-class support vectors.

    Each sampled support set is paired with one sampled query, which drives
    the interactive encoding of the support instances.
    """
    if k_shot < 2:
        raise ConfigError("distance statistic needs k >= 2 (no pairs otherwise)")
    spec = spec or variants.from_id(1)
    rng = np.random.default_rng(seed)
    total = 0.0
    with ad.no_grad():
        for _ in range(sets_count):
            episode = sample_episode(corpus, n_way, k_shot, 1, rng)
            q_inst, _ = episode.queries[0]
            q_ctx = encode_instance(q_inst, embeddings, params.encoder,
                                    params.dims, False, None, 0.0)
            class_vectors = []
            for row in episode.support:
                ctxs = [encode_instance(inst, embeddings, params.encoder,
                                        params.dims, False, None, 0.0)
                        for inst in row]
                _, bundle = encode_pair(q_ctx, ctxs, params.match,
                                        variant=spec.lm_variant)
                class_vectors.append([s.data for s in bundle.s_hats])
            total += support_spread(class_vectors)
    return total / sets_count


def cmd_distance(args) -> int:
    params = ParameterSet.load(args.checkpoint)
    corpus = load_corpus(args.data, "eval")
    vocab = datamod.build_vocab(corpus)
    embeddings = load_embeddings(args.embeddings, vocab, dim=params.dims.d_w)
    stat = distance_statistic(params, embeddings, corpus, args.n, args.k,
                              args.sets, args.seed)
    print(f"D: {format(stat, '.17g')} over {args.sets} support sets "
          f"({args.n}-way {args.k}-shot)")
    return 0


def write_heatmap(path, query_tokens, support_tokens, matrix) -> None:
    """Tab-separated: header row of support tokens, one row per query token."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t" + "\t".join(support_tokens) + "\n")
        for token, weights in zip(query_tokens, matrix):
            vals = "\t".join(format(w, ".17g") for w in weights)
            fh.write(f"{token}\t{vals}\n")


def read_heatmap(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    support_tokens = lines[0].split("\t")[1:]
    query_tokens, rows = [], []
    for line in lines[1:]:
        parts = line.split("\t")
        query_tokens.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    return query_tokens, support_tokens, np.array(rows)


def attention_heatmap(params: ParameterSet, embeddings, query_inst, support_inst):
    """Column-normalized alignment weights between a query and one support."""
    with ad.no_grad():
        q_ctx = encode_instance(query_inst, embeddings, params.encoder,
                                params.dims, False, None, 0.0)
        s_ctx = encode_instance(support_inst, embeddings, params.encoder,
                                params.dims, False, None, 0.0)
        _, bundle = encode_pair(q_ctx, [s_ctx], params.match, variant="full")
    return bundle.attn_support.data


def cmd_heatmap(args) -> int:
    params = ParameterSet.load(args.checkpoint)
    corpus = load_corpus(args.data, "eval")
    vocab = datamod.build_vocab(corpus)
    embeddings = load_embeddings(args.embeddings, vocab, dim=params.dims.d_w)

    def pick(relation, index):
        try:
            return corpus.by_relation[relation][index]
        except (KeyError, IndexError):
            raise datamod.ValidationError(
                f"no instance {index} for relation {relation!r}") from None

    query = pick(args.query_relation, args.query_index)
    support = pick(args.support_relation, args.support_index)
    weights = attention_heatmap(params, embeddings, query, support)
    write_heatmap(args.out, list(query.tokens), list(support.tokens), weights)
    if args.render:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(max(4, len(support.tokens) * 0.4),
                                        max(3, len(query.tokens) * 0.4)))
        ax.imshow(weights, cmap="Greys", aspect="auto")
        ax.set_xticks(range(len(support.tokens)), support.tokens,
                      rotation=90, fontsize=7)
        ax.set_yticks(range(len(query.tokens)), query.tokens, fontsize=7)
        fig.tight_layout()
        fig.savefig(args.render, dpi=150)
        plt.close(fig)
    print(f"wrote {weights.shape[0]}x{weights.shape[1]} heatmap to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_config_flags(parser):
    parser.add_argument("--config", required=True, help="key = value config file")
    for name, ftype in _CONFIG_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if ftype in ("int", int):
            parser.add_argument(flag, type=int, default=None, dest=f"cfg_{name}")
        elif ftype in ("float", float):
            parser.add_argument(flag, type=float, default=None, dest=f"cfg_{name}")
        else:
            parser.add_argument(flag, default=None, dest=f"cfg_{name}")


def _config_overrides(args) -> dict:
    return {name: getattr(args, f"cfg_{name}", None) for name in _CONFIG_FIELDS}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewmatch",
        description="Few-shot relation classification with multi-level "
                    "matching and aggregation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one or more repetitions")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--n", type=int, default=5)
    p_eval.add_argument("--k", type=int, default=1)
    p_eval.add_argument("--episodes", type=int, default=1000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--ablation-id", type=int, default=1)
    p_eval.add_argument("--records", default=None,
                        help="write per-episode records to this file")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train/evaluate model variants")
    _add_config_flags(p_ablate)
    p_ablate.add_argument("--ids", default="1,2,3,4,5,6,7,8,9,10",
                          help="comma-separated ablation ids")
    p_ablate.set_defaults(func=cmd_ablate)

    p_dist = sub.add_parser("distance",
                            help="support-set spread statistic of a checkpoint")
    p_dist.add_argument("--checkpoint", required=True)
    p_dist.add_argument("--data", required=True)
    p_dist.add_argument("--embeddings", required=True)
    p_dist.add_argument("--n", type=int, default=5)
    p_dist.add_argument("--k", type=int, default=5)
    p_dist.add_argument("--sets", type=int, default=1000)
    p_dist.add_argument("--seed", type=int, default=0)
    p_dist.set_defaults(func=cmd_distance)

    p_heat = sub.add_parser("heatmap",
                            help="export the alignment weights for one pair")
    p_heat.add_argument("--checkpoint", required=True)
    p_heat.add_argument("--data", required=True)
    p_heat.add_argument("--embeddings", required=True)
    p_heat.add_argument("--query-relation", required=True)
    p_heat.add_argument("--query-index", type=int, default=0)
    p_heat.add_argument("--support-relation", required=True)
    p_heat.add_argument("--support-index", type=int, default=0)
    p_heat.add_argument("--out", required=True)
    p_heat.add_argument("--render", default=None,
                        help="also write a raster image to this path")
    p_heat.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, variants.VariantError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (datamod.IngestionError, datamod.ValidationError, datamod.FormatError,
            datamod.SamplingError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, ad.GraphError, ad.DimensionError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
