"""Command-line pipeline: synth, enhance, tag, train, generate, evaluate, plot.

Config layering per subcommand: argparse defaults < --config JSON file <
explicit flags. The fully resolved configuration is echoed to the output
directory (run_config.json) next to an experiment.json manifest recording
the corpus hash and artifact paths, so every run is reproducible from its
outputs.

Exit codes: 0 success, 1 validation/runtime failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

from intensign import corpus as corpus_mod
from intensign.backtrans import BackTranslator
from intensign.checkpoint import load_checkpoint, save_checkpoint
from intensign.corpus import Corpus, SynthConfig, load_corpus, save_corpus, synth_generate
from intensign.dynsel import DynamicSelectionGenerator
from intensign.intensify import Strategy, apply_strategy, partition_by_intensity
from intensign.metrics import ScoreReport, read_sentence_file, write_sentence_file
from intensign.plotting import plot_file, write_alpha_csv, write_pose_csv
from intensign.ptgen import ProgressiveTransformerGenerator
from intensign.tagger import IntensityTagger


def corpus_hash(path) -> str:
    """sha256 over the split files and stats, for provenance manifests."""
    digest = hashlib.sha256()
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "stats.json"):
        f = Path(path) / name
        if f.exists():
            digest.update(name.encode())
            digest.update(f.read_bytes())
    return digest.hexdigest()


def _write_outputs(out_dir: Path, args: argparse.Namespace, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    (out_dir / "run_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    manifest = {"config": resolved, **manifest}
    (out_dir / "experiment.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _load_config_file(path) -> dict:
    config = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object")
    return config


def _require_labels(corpus: Corpus) -> None:
    missing = [i.id for i in corpus.all_instances() if i.gloss_labels is None]
    if missing:
        raise ValueError(
            f"corpus instances lack intensity labels (e.g. {missing[:3]}); run tag-label "
            "or provide *.labels.tsv files")


def _enhanced_tokens(inst, strategy: str | None) -> list[str]:
    if strategy is None or strategy == "none":
        return list(inst.gloss)
    if inst.gloss_labels is None:
        raise ValueError(f"instance {inst.id} has no labels; cannot enhance")
    return apply_strategy(inst.gloss, inst.gloss_labels, strategy)


# --- subcommand implementations -----------------------------------------------------


def cmd_synth(args) -> int:
    kwargs = {f.name: getattr(args, f.name) for f in fields(SynthConfig)}
    config = SynthConfig(**kwargs)
    corpus = synth_generate(config)
    out = Path(args.out)
    save_corpus(corpus, out)
    _write_outputs(out, args, {"corpus_hash": corpus_hash(out), "splits": {
        "train": len(corpus.train), "dev": len(corpus.dev), "test": len(corpus.test)}})
    print(f"synthetic corpus written to {out} "
          f"({len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)} instances)")
    return 0


def cmd_enhance(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.labels:
        labels = corpus_mod.read_label_file(args.labels)
        for split in ("train", "dev", "test"):
            corpus_mod.attach_labels(corpus.split(split), labels)
    _require_labels(corpus)
    strategy = Strategy(args.strategy).value
    for inst in corpus.all_instances():
        inst.gloss = _enhanced_tokens(inst, strategy)
        inst.gloss_labels = None  # markers now carry the intensity information
    out = Path(args.out)
    save_corpus(corpus, out)
    _write_outputs(out, args, {"corpus_hash": corpus_hash(out), "strategy": strategy})
    print(f"enhanced corpus ({strategy}) written to {out}")
    return 0


def _tagger_pairs(instances):
    pairs, labels = [], []
    for inst in instances:
        for i, gloss_token in enumerate(inst.gloss):
            pairs.append((inst.text, gloss_token))
            labels.append(inst.gloss_labels[i])
    return pairs, labels


def cmd_tag_train(args) -> int:
    corpus = load_corpus(args.corpus)
    _require_labels(corpus)
    pairs, labels = _tagger_pairs(corpus.train)
    model = IntensityTagger(variant=args.variant, embed_dim=args.embed_dim,
                            hidden_dim=args.hidden_dim, lstm_layers=args.lstm_layers,
                            dropout=args.dropout, epochs=args.epochs,
                            learning_rate=args.learning_rate, seed=args.seed)
    model.fit(pairs, labels)
    out = Path(args.out)
    save_checkpoint(model, out)
    dev_pairs, dev_labels = _tagger_pairs(corpus.dev)
    metrics = {}
    if dev_pairs:
        p, r, f = model.evaluate(dev_pairs, dev_labels)
        metrics = {"dev_precision": p, "dev_recall": r, "dev_f1": f}
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    _write_outputs(out, args, {"corpus_hash": corpus_hash(args.corpus),
                               "checkpoint": str(out), "metrics": metrics})
    print(f"tagger trained; final loss {model.loss_curve_[-1]:.4f}"
          + (f", dev macro-F1 {metrics['dev_f1']:.1f}" if metrics else ""))
    return 0


def cmd_tag_label(args) -> int:
    corpus = load_corpus(args.corpus)
    model = load_checkpoint(args.model)
    if not isinstance(model, IntensityTagger):
        raise ValueError(f"{args.model} is not a tagger checkpoint")
    overrides = corpus_mod.read_label_file(args.override) if args.override else None
    labels = model.label_corpus(corpus, overrides=overrides)
    corpus_mod.write_label_file(args.out, labels)
    print(f"labels for {len(labels)} instances written to {args.out}")
    return 0


def _generator_training_data(corpus: Corpus, strategy):
    X, y = [], []
    for inst in corpus.train:
        if inst.frames is None:
            raise ValueError(f"instance {inst.id} has no frames")
        X.append(_enhanced_tokens(inst, strategy))
        y.append(corpus.raw_frames(inst))
    return X, y


def cmd_pt_train(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.strategy not in (None, "none"):
        _require_labels(corpus)
    X, y = _generator_training_data(corpus, args.strategy)
    model = ProgressiveTransformerGenerator(
        layers=args.layers, heads=args.heads, embed_dim=args.embed_dim, ff_dim=args.ff_dim,
        noise_rate=args.noise_rate, max_frames=args.max_frames,
        stop_threshold=args.stop_threshold, learning_rate=args.learning_rate,
        epochs=args.epochs, counter_loss_weight=args.counter_loss_weight,
        counter_input_noise=args.counter_input_noise, decay_epochs=args.decay_epochs,
        decay_factor=args.decay_factor, seed=args.seed)
    model.fit(X, y)
    out = Path(args.out)
    save_checkpoint(model, out)
    dev = [i for i in corpus.dev if i.frames is not None]
    dev_mse = model.evaluate_mse([
        _enhanced_tokens(i, args.strategy) for i in dev],
        [corpus.raw_frames(i) for i in dev]) if dev else None
    _write_outputs(out, args, {"corpus_hash": corpus_hash(args.corpus),
                               "checkpoint": str(out), "dev_mse": dev_mse})
    print(f"pt model trained; final loss {model.loss_curve_[-1]:.4f}"
          + (f", dev mse {dev_mse:.4f}" if dev_mse is not None else ""))
    return 0


def cmd_dyn_train(args) -> int:
    corpus = load_corpus(args.corpus)
    _require_labels(corpus)
    strategies = [Strategy(s).value for s in args.strategies.split(",")]
    X, y = [], []
    for inst in corpus.train:
        if inst.frames is None:
            raise ValueError(f"instance {inst.id} has no frames")
        X.append(tuple(_enhanced_tokens(inst, s) for s in strategies))
        y.append(corpus.raw_frames(inst))
    model = DynamicSelectionGenerator(
        k=len(strategies), strategies=tuple(strategies), mode=args.mode, layers=args.layers,
        heads=args.heads, embed_dim=args.embed_dim, mlp_dim=args.mlp_dim, ff_dim=args.ff_dim,
        noise_rate=args.noise_rate, max_frames=args.max_frames,
        stop_threshold=args.stop_threshold, learning_rate=args.learning_rate,
        epochs=args.epochs, counter_loss_weight=args.counter_loss_weight,
        counter_input_noise=args.counter_input_noise, decay_epochs=args.decay_epochs,
        decay_factor=args.decay_factor, seed=args.seed,
        mixed_history=not args.independent_histories)
    model.fit(X, y)
    out = Path(args.out)
    save_checkpoint(model, out)
    _write_outputs(out, args, {"corpus_hash": corpus_hash(args.corpus), "checkpoint": str(out)})
    print(f"dynamic model ({args.mode}) trained; final loss {model.loss_curve_[-1]:.4f}")
    return 0


def cmd_generate(args) -> int:
    corpus = load_corpus(args.corpus)
    model = load_checkpoint(args.model)
    run_config_file = Path(args.model) / "run_config.json"
    strategy = args.strategy
    if strategy is None and run_config_file.exists():
        recorded = json.loads(run_config_file.read_text(encoding="utf-8"))
        strategy = recorded.get("strategy")
        if strategy is None and "strategies" in recorded:
            strategy = recorded["strategies"]
    instances = corpus.split(args.split)
    if args.ids:
        wanted = set(args.ids.split(","))
        instances = [i for i in instances if i.id in wanted]
    if not instances:
        raise ValueError("no instances selected for generation")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    generated = []
    for inst in instances:
        if isinstance(model, DynamicSelectionGenerator):
            strategies = [s.strip() for s in str(strategy).split(",")] if strategy else \
                list(model.strategies or [])
            if len(strategies) != model.k:
                raise ValueError(f"need {model.k} strategies for this model, got {strategies}")
            sources = tuple(_enhanced_tokens(inst, s) for s in strategies)
            seq, trace = model.generate(sources)
            write_alpha_csv(out / f"{inst.id}.alpha.csv", trace)
        elif isinstance(model, ProgressiveTransformerGenerator):
            seq = model.generate(_enhanced_tokens(inst, strategy))
        else:
            raise ValueError(f"{args.model} is not a generator checkpoint")
        write_pose_csv(out / f"{inst.id}.pose.csv", seq.frames, seq.counters)
        generated.append(inst.id)
    _write_outputs(out, args, {"corpus_hash": corpus_hash(args.corpus),
                               "model": str(args.model), "instances": generated})
    print(f"generated {len(generated)} pose sequences into {out}")
    return 0


def cmd_bt_train(args) -> int:
    corpus = load_corpus(args.corpus)
    frames, glosses, texts = [], [], []
    for inst in corpus.train:
        if inst.frames is None:
            raise ValueError(f"instance {inst.id} has no frames")
        frames.append(corpus.raw_frames(inst))
        glosses.append(inst.gloss)
        texts.append(inst.text)
    model = BackTranslator(layers=args.layers, heads=args.heads, embed_dim=args.embed_dim,
                           ff_dim=args.ff_dim, recognition_weight=args.recognition_weight,
                           translation_weight=args.translation_weight,
                           learning_rate=args.learning_rate, epochs=args.epochs,
                           max_len=args.max_len, input_noise_rate=args.input_noise_rate,
                           seed=args.seed)
    model.fit(frames, glosses, texts)
    out = Path(args.out)
    save_checkpoint(model, out)
    _write_outputs(out, args, {"corpus_hash": corpus_hash(args.corpus), "checkpoint": str(out)})
    print(f"back-translator trained; final loss {model.loss_curve_[-1]:.4f}")
    return 0


def _translate_pose_dir(model: BackTranslator, poses: Path, instances) -> tuple[list, list, list]:
    from intensign.plotting import read_pose_csv

    kept, hyps, refs = [], [], []
    for inst in instances:
        pose_file = poses / f"{inst.id}.pose.csv"
        if not pose_file.exists():
            continue
        frames, _ = read_pose_csv(pose_file)
        kept.append(inst)
        hyps.append(model.translate(frames))
        refs.append(list(inst.text))
    if not kept:
        raise ValueError(f"no pose CSVs in {poses} match split instance ids")
    return kept, hyps, refs


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = ScoreReport()

    if args.hypotheses:
        hyps = read_sentence_file(args.hypotheses)
        refs = read_sentence_file(args.references)
        baseline = read_sentence_file(args.baseline) if args.baseline else None
        report.add("full", hyps, refs, baseline=baseline, seed=args.seed,
                   resamples=args.resamples)
    else:
        if not (args.bt_model and args.poses and args.corpus):
            raise ValueError("pose mode needs --bt-model, --poses and --corpus "
                             "(or use --hypotheses/--references)")
        corpus = load_corpus(args.corpus)
        model = load_checkpoint(args.bt_model)
        if not isinstance(model, BackTranslator):
            raise ValueError(f"{args.bt_model} is not a back-translator checkpoint")
        instances = corpus.split(args.split)
        kept, hyps, refs = _translate_pose_dir(model, Path(args.poses), instances)
        base_by_id = {}
        if args.baseline_poses:
            kept_b, hyps_b, _ = _translate_pose_dir(model, Path(args.baseline_poses), instances)
            base_by_id = {i.id: h for i, h in zip(kept_b, hyps_b)}

        write_sentence_file(out / "hypotheses.txt", hyps)
        write_sentence_file(out / "references.txt", refs)

        def subset_rows(name, subset_ids):
            rows = [(i, h, r) for i, h, r in zip(kept, hyps, refs) if i.id in subset_ids]
            if not rows:
                return
            sub_hyps = [h for _, h, _ in rows]
            sub_refs = [r for _, _, r in rows]
            sub_base = [base_by_id[i.id] for i, _, _ in rows] if base_by_id else None
            if sub_base is not None and len(sub_base) != len(rows):
                sub_base = None
            report.add(name, sub_hyps, sub_refs, baseline=sub_base, seed=args.seed,
                       resamples=args.resamples)

        all_ids = {i.id for i in kept}
        subset_rows("full", all_ids)
        if all(i.gloss_labels is not None for i in kept):
            with_int, without = partition_by_intensity(kept)
            subset_rows("with-intensification", {i.id for i in with_int})
            subset_rows("without-intensification", {i.id for i in without})

    report.write_csv(out / "scores.csv")
    report.write_json(out / "scores.json")
    _write_outputs(out, args, {"reports": [str(out / "scores.csv"), str(out / "scores.json")]})
    for row in report.rows:
        flags = ""
        if row.p_value is not None:
            flags = f"  p={row.p_value:.3f}" + (" *" if row.significant_90 else "") + \
                ("*" if row.significant_95 else "")
        print(f"{row.subset}: BLEU-1 {row.bleu1:.2f}  BLEU-4 {row.bleu4:.2f}  "
              f"ROUGE-L {row.rouge_l:.2f}{flags}")
    return 0


def cmd_plot(args) -> int:
    out = plot_file(args.input, args.out)
    print(f"svg written to {out}")
    return 0


# --- parser -------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON file with defaults for this subcommand")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intensign",
                                     description="intensification-aware sign generation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the deterministic synthetic corpus")
    _add_common(p)
    p.add_argument("--out", required=True)
    for f in fields(SynthConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(flag, action="store_true", default=f.default)
        else:
            p.add_argument(flag, type=type(f.default), default=f.default)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("enhance", help="rewrite glosses with intensity markers")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--strategy", required=True,
                   choices=[s.value for s in Strategy])
    p.add_argument("--labels", help="label TSV to apply before enhancement")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("tag-train", help="train the intensity tagger")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=["pooled", "bilstm"], default="pooled")
    p.add_argument("--embed-dim", type=int, default=100)
    p.add_argument("--hidden-dim", type=int, default=300)
    p.add_argument("--lstm-layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.set_defaults(func=cmd_tag_train)

    p = sub.add_parser("tag-label", help="label a corpus with a trained tagger")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--override", help="TSV labels that take precedence over predictions")
    p.set_defaults(func=cmd_tag_label)

    def add_generator_flags(p, embed_default):
        p.add_argument("--layers", type=int, default=2)
        p.add_argument("--heads", type=int, default=4)
        p.add_argument("--embed-dim", type=int, default=embed_default)
        p.add_argument("--ff-dim", type=int, default=None)
        p.add_argument("--noise-rate", type=float, default=5.0)
        p.add_argument("--max-frames", type=int, default=200)
        p.add_argument("--stop-threshold", type=float, default=0.98)
        p.add_argument("--learning-rate", type=float, default=1e-3)
        p.add_argument("--epochs", type=int, default=40)
        p.add_argument("--counter-loss-weight", type=float, default=1.0)
        p.add_argument("--counter-input-noise", type=float, default=0.0)
        p.add_argument("--decay-epochs", type=int, default=0)
        p.add_argument("--decay-factor", type=float, default=0.2)

    p = sub.add_parser("pt-train", help="train the progressive transformer generator")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", default=None,
                   choices=[s.value for s in Strategy] + ["none"],
                   help="enhance glosses with this strategy before training")
    add_generator_flags(p, 512)
    p.set_defaults(func=cmd_pt_train)

    p = sub.add_parser("dyn-train", help="train the dynamic selection generator")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategies", default="suffixation,end-marking",
                   help="comma-separated enhancement strategies, one per source")
    p.add_argument("--mode", choices=["soft", "hard"], default="soft")
    p.add_argument("--mlp-dim", type=int, default=256)
    p.add_argument("--independent-histories", action="store_true")
    add_generator_flags(p, 256)
    p.set_defaults(func=cmd_dyn_train)

    p = sub.add_parser("generate", help="generate poses for a corpus split")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p.add_argument("--ids", help="comma-separated instance ids (default: whole split)")
    p.add_argument("--strategy", default=None,
                   help="override the enhancement recorded with the model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bt-train", help="train the back-translation evaluator")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--ff-dim", type=int, default=None)
    p.add_argument("--recognition-weight", type=float, default=5.0)
    p.add_argument("--translation-weight", type=float, default=1.0)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--input-noise-rate", type=float, default=None)
    p.set_defaults(func=cmd_bt_train)

    p = sub.add_parser("evaluate", help="score hypotheses or generated poses")
    _add_common(p)
    p.add_argument("--hypotheses", help="sentence file (file mode)")
    p.add_argument("--references", help="sentence file (file mode)")
    p.add_argument("--baseline", help="baseline hypotheses for significance (file mode)")
    p.add_argument("--bt-model", help="back-translator checkpoint (pose mode)")
    p.add_argument("--poses", help="directory of <id>.pose.csv files (pose mode)")
    p.add_argument("--baseline-poses", help="baseline system's pose directory")
    p.add_argument("--corpus", help="corpus directory (pose mode)")
    p.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render a pose or alpha CSV as SVG")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def _explicit_dests(argv) -> set[str]:
    """Dests named literally on the command line (all options are --long-form)."""
    out = set()
    for tok in argv or []:
        if tok.startswith("--"):
            out.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    return out


def run(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            overrides = _load_config_file(args.config)
            known = set(vars(args)) - {"func", "command", "config"}
            unknown = set(overrides) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            explicit = _explicit_dests(argv)
            for key, value in overrides.items():
                if key not in explicit:  # flags beat the config file
                    setattr(args, key, value)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if exc.code is not None else 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
