"""Command-line entry point: ``idkg <subcommand> ...``.

Every subcommand prints one JSON summary line on stdout and logs to stderr.
Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IDKGError, ManifestMismatch
from .io import atomic_write_bytes, atomic_write_text, dumps_json, read_features, require_file, sha256_file
from .kg import build_kg, corpus_stats, decode_triples, encode_triples, load_kg, read_metadata, save_kg
from .kge import KgeConfig, eval_link_prediction, load_embeddings, save_embeddings, split_triples, train_embeddings, write_history
from .kgfeature import collect_entities, pseudo_label, write_pseudo_label_cache
from .pipeline import DESK_KGE, DESK_TRAIN, TAU_GRID, VARIANTS, evaluate, gate_summary, make_model, prepare_from_parts
from .plotting import AVERAGES, plot_ablation, plot_tau_sweep
from .synthdata import SynthConfig, generate_corpus, write_corpus
from .train import TrainConfig, check_inputs, fit, load_checkpoint, predict_labels, save_checkpoint

log = logging.getLogger("idkg")

# argparse reads a leading dash as an option, so variants are spelled "no-X" on the command line
VARIANT_FLAGS = {("no" + k if k.startswith("-") else k): k for k in VARIANTS}

PROFILES = {"desk": (DESK_KGE, DESK_TRAIN), "reference": (KgeConfig(), TrainConfig())}


# -- configuration ----------------------------------------------------------


def _add_config_flags(parser, cls, skip=()):
    """One ``--flag`` per config field; defaults stay ``None`` so file values can show through."""
    group = parser.add_argument_group(f"{cls.__name__} overrides")
    for f in fields(cls):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            group.add_argument(flag, dest=f.name, type=_parse_bool, metavar="on|off")
        elif f.name in ("split", "casts_per_movie"):
            group.add_argument(flag, dest=f.name, type=float if f.name == "split" else int, nargs=len(getattr(cls(), f.name)))
        else:
            conv = {"int": int, "str": str}.get(str(f.type), float)
            group.add_argument(flag, dest=f.name, type=conv)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _build_config(cls, base, args, section: str):
    """Profile defaults, then the ``--config`` file section, then explicit flags."""
    values = asdict(base)
    if args.config:
        doc = json.loads(require_file(args.config).read_text(encoding="utf-8"))
        extra = doc.get(section, {})
        unknown = set(extra) - set(values)
        if unknown:
            raise IDKGError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
        values.update(extra)
    for f in fields(cls):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    for key in ("split", "casts_per_movie", "betas"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    return cls(**values)


def _profile(args):
    return PROFILES[getattr(args, "profile", "desk")]


# -- shared input loading ---------------------------------------------------


def _load_stage2_inputs(args):
    records = read_metadata(args.metadata)
    text = read_features(args.text)
    image = read_features(args.image)
    kg, kg_manifest = load_kg(args.kg)
    P, emb_manifest = load_embeddings(args.embeddings)
    if emb_manifest.get("kg_hash") != kg_manifest["hash"]:
        raise ManifestMismatch(f"embeddings in {args.embeddings} were trained on a different graph than {args.kg}")
    stats = corpus_stats(records, kg)
    prep = prepare_from_parts(records, text, image, kg, P, stats)
    hashes = {
        "metadata": sha256_file(args.metadata),
        "text": sha256_file(args.text),
        "image": sha256_file(args.image),
        "kg": kg_manifest["hash"],
        "embeddings": emb_manifest["hash"],
    }
    return records, prep, hashes


def _add_stage2_inputs(p):
    p.add_argument("--metadata", required=True, help="metadata JSONL")
    p.add_argument("--text", required=True, help="text feature file")
    p.add_argument("--image", required=True, help="image feature file")
    p.add_argument("--kg", required=True, help="KG directory from build-kg")
    p.add_argument("--embeddings", required=True, help="embedding directory from train-kge")


def _split(prep, name):
    if name not in prep.splits:
        raise IDKGError(f"corpus has no {name!r} records")
    return prep.splits[name]


# -- subcommands ------------------------------------------------------------


def cmd_synth(args):
    cfg = _build_config(SynthConfig, SynthConfig(), args, "synth")
    corpus = generate_corpus(cfg)
    paths = write_corpus(corpus, args.out)
    return {
        "command": "synth",
        "records": len(corpus.records),
        "split_counts": corpus.truth["split_counts"],
        "test_unmatched_fraction": corpus.truth["test_unmatched_fraction"],
        "files": {k: str(v) for k, v in paths.items()},
    }


def cmd_build_kg(args):
    records = read_metadata(args.metadata)
    kg = build_kg(records)
    manifest = save_kg(kg, args.out, source={"metadata_sha256": sha256_file(args.metadata)})
    return {"command": "build-kg", "hash": manifest["hash"], **kg.summary()}


def cmd_train_kge(args):
    cfg = _build_config(KgeConfig, _profile(args)[0], args, "kge")
    kg, kg_manifest = load_kg(args.kg)
    held = None
    if args.holdout:
        kg, held = split_triples(kg, args.holdout, np.random.default_rng([cfg.seed, 7]))
    t0 = time.perf_counter()
    P, history = train_embeddings(kg, cfg, progress=lambda e, l: log.debug("kge epoch %d loss %.5f", e, l))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_history(out / "history.json", history)
    extra = {}
    if held is not None:
        atomic_write_bytes(out / "heldout.kgt", encode_triples(held))
        extra["heldout_triples"] = int(len(held))
        extra["heldout_sha256"] = sha256_file(out / "heldout.kgt")
    manifest = save_embeddings(P, out, cfg, kg, kg_manifest["hash"], extra)
    return {
        "command": "train-kge",
        "model": cfg.model,
        "final_loss": history[-1] if history else None,
        "seconds": round(time.perf_counter() - t0, 2),
        "hash": manifest["hash"],
        **extra,
    }


def cmd_eval_kge(args):
    kg, kg_manifest = load_kg(args.kg)
    P, manifest = load_embeddings(args.embeddings)
    if manifest.get("kg_hash") != kg_manifest["hash"]:
        raise ManifestMismatch(f"embeddings in {args.embeddings} were trained on a different graph than {args.kg}")
    held_path = Path(args.embeddings) / "heldout.kgt"
    if "heldout_sha256" in manifest:
        if sha256_file(require_file(held_path)) != manifest["heldout_sha256"]:
            raise ManifestMismatch(f"{held_path} does not match the embedding manifest")
        test = decode_triples(held_path.read_bytes())
        source = "heldout"
    else:
        test, source = kg.triples, "train"
    result = eval_link_prediction(kg, P, test, k=args.k, filtered=not args.raw, candidates=args.candidates)
    return {"command": "eval-kge", "model": P.model, "triples": source, **result}


def _train_from_args(args, prep):
    cfg = _build_config(TrainConfig, _profile(args)[1], args, "train")
    model = make_model(prep, cfg)
    history = fit(model, prep.splits["train"], progress=lambda e, t: log.info("epoch %d %s", e, {k: round(v, 3) for k, v in t.items()}))
    return cfg, model, history


def cmd_train(args):
    records, prep, hashes = _load_stage2_inputs(args)
    cfg, model, history = _train_from_args(args, prep)
    out = Path(args.out)
    manifest = save_checkpoint(model, out, hashes)
    atomic_write_text(out / "history.json", dumps_json({"epochs": history}))
    train_recs = [r for r in records if r.split == "train"]
    matches = [collect_entities(r, prep.kg) for r in train_recs]
    write_pseudo_label_cache(
        out / "pseudo_labels.jsonl", [r.movie_id for r in train_recs], matches, [pseudo_label(m, prep.stats) for m in matches]
    )
    return {
        "command": "train",
        "final_loss": history[-1] if history else {},
        "gates_train": gate_summary(model, prep.splits["train"]),
        "hash": manifest["hash"],
    }


def _load_checked_model(args, hashes):
    model, manifest = load_checkpoint(args.checkpoint)
    check_inputs(manifest, **hashes)
    return model


def cmd_eval(args):
    _, prep, hashes = _load_stage2_inputs(args)
    model = _load_checked_model(args, hashes)
    samples = _split(prep, args.split)
    report = evaluate(model, samples, args.threshold)
    body = {"split": args.split, **report.to_json(), "gates": gate_summary(model, samples)}
    if args.out:
        atomic_write_text(args.out, dumps_json(body))
    return {"command": "eval", **body}


def cmd_predict(args):
    _, prep, hashes = _load_stage2_inputs(args)
    model = _load_checked_model(args, hashes)
    samples = _split(prep, args.split)
    preds = predict_labels(model, samples, args.threshold)
    lines = [
        json.dumps({"id": i, "genres": [model.genres[g] for g in sorted(s)]}, ensure_ascii=False)
        for i, s in zip(samples.ids, preds)
    ]
    atomic_write_text(args.out, "\n".join(lines) + ("\n" if lines else ""))
    return {"command": "predict", "split": args.split, "samples": len(lines), "out": str(args.out)}


def _report_rows(results: dict, key: str) -> list[dict]:
    rows = []
    for name, report in results.items():
        js = report.to_json()
        rows.append({key: name, **{a: js[a] for a in AVERAGES}})
    return rows


def _write_table(path: Path, rows: list[dict]) -> None:
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_ablate(args):
    from .pipeline import run_ablation

    _, prep, _ = _load_stage2_inputs(args)
    cfg = _build_config(TrainConfig, _profile(args)[1], args, "train")
    variants = [VARIANT_FLAGS[v] for v in args.variants] if args.variants else None
    results = run_ablation(prep, cfg, variants, args.split)
    rows = _report_rows(results, "variant")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "ablation.tsv", rows)
    atomic_write_text(out / "ablation.json", dumps_json({k: v.to_json() for k, v in results.items()}))
    plot_ablation(rows, out / "ablation.png")
    return {"command": "ablate", "micro": {r["variant"]: r["micro"] for r in rows}, "out": str(out)}


def cmd_tau_sweep(args):
    from .pipeline import run_tau_sweep

    _, prep, _ = _load_stage2_inputs(args)
    cfg = _build_config(TrainConfig, _profile(args)[1], args, "train")
    results = run_tau_sweep(prep, cfg, args.taus, args.split)
    rows = _report_rows(results, "tau")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "tau_sweep.tsv", rows)
    atomic_write_text(out / "tau_sweep.json", dumps_json({str(k): v.to_json() for k, v in results.items()}))
    plot_tau_sweep(rows, out / "tau_sweep.png")
    return {"command": "tau-sweep", "micro": {str(r["tau"]): r["micro"] for r in rows}, "out": str(out)}


def cmd_pipeline(args):
    """synth -> build-kg -> train-kge -> train -> eval under one output directory."""
    out = Path(args.out)
    steps = [
        ["synth", "--out", str(out / "corpus")],
        ["build-kg", "--metadata", str(out / "corpus/metadata.jsonl"), "--out", str(out / "kg")],
        ["train-kge", "--kg", str(out / "kg"), "--out", str(out / "kge")],
    ]
    inputs = [
        "--metadata", str(out / "corpus/metadata.jsonl"),
        "--text", str(out / "corpus/text.feat"),
        "--image", str(out / "corpus/image.feat"),
        "--kg", str(out / "kg"),
        "--embeddings", str(out / "kge"),
    ]
    steps.append(["train", *inputs, "--out", str(out / "model")])
    steps.append(["eval", *inputs, "--checkpoint", str(out / "model"), "--out", str(out / "metrics.json")])
    shared = ["--profile", args.profile] + (["--config", args.config] if args.config else [])
    summaries = []
    for step in steps:
        argv = step if step[0] in ("synth", "build-kg") else step + shared
        if step[0] == "synth" and args.config:
            argv = step + ["--config", args.config]
        summaries.append(_run(argv))
    final = summaries[-1]
    return {"command": "pipeline", "micro": final["micro"], "macro": final["macro"], "metrics": str(out / "metrics.json")}


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idkg", description="Movie genre classification with a metadata knowledge graph.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file with optional 'synth', 'kge' and 'train' sections")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "Generate a synthetic corpus with planted metadata-genre structure.")
    p.add_argument("--out", required=True)
    _add_config_flags(p, SynthConfig)

    p = add("build-kg", cmd_build_kg, "Build the domain KG from the train split of a metadata file.")
    p.add_argument("--metadata", required=True)
    p.add_argument("--out", required=True)

    p = add("train-kge", cmd_train_kge, "Train translate-model embeddings of a KG.")
    p.add_argument("--kg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout", type=float, default=0.0, help="fraction of triples kept out for eval-kge")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="default hyperparameters: small single-core settings (desk) or the full schedule (reference)")
    _add_config_flags(p, KgeConfig)

    p = add("eval-kge", cmd_eval_kge, "Link-prediction metrics for trained embeddings.")
    p.add_argument("--kg", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--candidates", choices=("kind", "all"), default="kind")
    p.add_argument("--raw", action="store_true", help="raw instead of filtered ranking")

    p = add("train", cmd_train, "Train the fusion classifier on the train split.")
    _add_stage2_inputs(p)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="default hyperparameters: small single-core settings (desk) or the full schedule (reference)")
    _add_config_flags(p, TrainConfig)

    for name, func, text in (
        ("eval", cmd_eval, "Score a checkpoint on one split."),
        ("predict", cmd_predict, "Write predicted genre sets as JSONL."),
    ):
        p = add(name, func, text)
        _add_stage2_inputs(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "valid", "test"), default="test")
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--out", required=(name == "predict"))
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                       help="default hyperparameters: small single-core settings (desk) or the full schedule (reference)")

    p = add("ablate", cmd_ablate, "Train every ablation variant and report F1 (TSV, JSON, PNG).")
    _add_stage2_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--variants", nargs="+", choices=list(VARIANT_FLAGS), default=None,
        help="subset of variants; 'no-X' selects the '-X' row",
    )
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="default hyperparameters: small single-core settings (desk) or the full schedule (reference)")
    _add_config_flags(p, TrainConfig, skip=("atten", "contra", "use_kg"))

    p = add("tau-sweep", cmd_tau_sweep, "Train over a temperature grid and report F1 (TSV, JSON, PNG).")
    _add_stage2_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--taus", nargs="+", type=float, default=list(TAU_GRID))
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="default hyperparameters: small single-core settings (desk) or the full schedule (reference)")
    _add_config_flags(p, TrainConfig, skip=("tau",))

    p = add("pipeline", cmd_pipeline, "Run synth, build-kg, train-kge, train and eval end to end.")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="default hyperparameters: small single-core settings (desk) or the full schedule (reference)")
    return parser


def _run(argv) -> dict:
    args = build_parser().parse_args(argv)
    log.info("running %s", args.command)
    return args.func(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except (IDKGError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
