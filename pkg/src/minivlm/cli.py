"""Command-line entry point: ``minivlm <verb> ...``."""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .configs import ConfigError, DetectorConfig, TransformerConfig, config_from_dict, config_to_dict, load_config

log = logging.getLogger("minivlm")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}


def _emit(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=float)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)


def _arch(ref: str, family: type):
    try:
        cfg = load_config(ref)
    except (KeyError, ConfigError) as exc:
        raise click.BadParameter(str(exc)) from exc
    if not isinstance(cfg, family):
        raise click.BadParameter(f"{ref!r} is not a {family.__name__}")
    return cfg


def _ks(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError as exc:
        raise click.BadParameter(f"bad K list {text!r}") from exc


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Compact vision-language pipeline: cost model, detector, fusion transformer, heads."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


# -- cost -------------------------------------------------------------------


@main.group()
def cost() -> None:
    """Parameter and FLOPs accounting."""


def _report(cfg, regions: int, tokens: int, image_size: int | None):
    from .cost_model import count_arch

    if isinstance(cfg, TransformerConfig):
        return count_arch(cfg, (regions, tokens))
    return count_arch(cfg, image_size)


@cost.command("report")
@click.option("--config", "config", required=True, help="YAML architecture file or preset name.")
@click.option("--regions", default=50, show_default=True)
@click.option("--tokens", default=35, show_default=True)
@click.option("--image-size", type=int, default=None, help="Detector input side (default: config value).")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table", show_default=True)
def cost_report(config, regions, tokens, image_size, fmt):
    try:
        rep = _report(load_config(config), regions, tokens, image_size)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(json.dumps(rep.to_dict(), indent=2) if fmt == "json" else rep.format_table())


@cost.command("compare")
@click.argument("configs", nargs=-1, required=True)
@click.option("--baseline", default=None, help="Name of the baseline row (default: last).")
@click.option("--regions", default=50, show_default=True)
@click.option("--tokens", default=35, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table", show_default=True)
def cost_compare(configs, baseline, regions, tokens, fmt):
    from .cost_model import R101_F, compare, count_arch

    reports = []
    for c in configs:
        if c.lower() == R101_F.name:
            reports.append(count_arch(R101_F))
            continue
        try:
            reports.append(_report(load_config(c), regions, tokens, None))
        except (KeyError, ValueError) as exc:
            raise click.ClickException(str(exc)) from exc
    try:
        table = compare(reports, baseline if baseline is not None else -1)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(json.dumps(table.to_dict(), indent=2) if fmt == "json" else table.format_table())


@cost.command("tables")
@click.option("--out", default=None, help="Output directory (default: under the output root).")
def cost_tables(out):
    from .harness import make_run_dir, run_cost_tables
    from .harness.reference import REFERENCE_VERSION

    run = make_run_dir("cost-tables", f"ref{REFERENCE_VERSION}", None, out)
    for p in run_cost_tables(run):
        click.echo(str(p))


# -- detect -----------------------------------------------------------------


@main.command()
@click.option("--config", "config", default="tee-0", show_default=True)
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Detector checkpoint; seeded random weights when omitted.")
@click.option("--images", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Region feature store to write.")
@click.option("--max-regions", default=50, show_default=True)
@click.option("--score-floor", type=float, default=None)
@click.option("--seed", default=0, show_default=True)
def detect(config, weights, images, out, max_regions, score_floor, seed):
    """Extract region features for every image in a directory."""
    from PIL import Image

    from .checkpoint import load_into
    from .detector import build_detector, preprocess_image, write_regions

    cfg = _arch(config, DetectorConfig)
    if score_floor is not None:
        cfg = replace(cfg, score_floor=score_floor)
    model = build_detector(cfg, seed=seed)
    if weights:
        load_into(model, weights).eval()
    paths = sorted(p for p in Path(images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

    def gen():
        for p in paths:
            tensor, size = preprocess_image(Image.open(p), cfg.image_size)
            rs = model.extract_regions(tensor, p.stem, size, max_regions)
            log.info("%s: %d regions", p.name, len(rs))
            yield rs

    n = write_regions(out, gen())
    click.echo(json.dumps({"images": n, "store": str(out)}))


# -- corpus and pre-training -------------------------------------------------


@main.command()
@click.option("--source", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON lines of {image_id, caption?, verified_tags?}.")
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--teacher", type=click.Choice(["none", "stub"]), default="none", show_default=True)
@click.option("--stub-caption", default=None, help="Fixed caption emitted by the stub teacher.")
def ingest(source, features, out, teacher, stub_caption):
    """Build a pre-training corpus from a source list and a feature store."""
    from .detector import read_regions
    from .pretrain import StubTeacher, ingest_distilled, write_corpus

    with open(source, encoding="utf-8") as fh:
        items = [json.loads(line) for line in fh if line.strip()]
    t = StubTeacher(stub_caption) if teacher == "stub" else None
    n = write_corpus(out, ingest_distilled(items, read_regions(features), t, feature_store=str(features)))
    click.echo(json.dumps({"records": n, "corpus": str(out)}))


@main.command()
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--features", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--synthetic", type=int, default=None, help="Use an N-record synthetic corpus instead.")
@click.option("--config", "config", default="toy", show_default=True)
@click.option("--steps", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--mlm-weight", default=1.0, show_default=True)
@click.option("--itm-weight", default=1.0, show_default=True)
@click.option("--out", default=None, help="Run directory (default: under the output root).")
def pretrain(corpus, features, synthetic, config, steps, seed, batch_size, lr, mlm_weight, itm_weight, out):
    """MLM + ITM pre-training; writes model.npz, metrics.json and run.json."""
    from .checkpoint import save_checkpoint
    from .detector import read_regions
    from .fusion import WhitespaceTokenizer
    from .harness.experiment import hash_payload, make_run_dir
    from .pretrain import evaluate_loss, fixed_batches, read_corpus, synthetic_corpus, train

    cfg = _arch(config, TransformerConfig)
    if synthetic:
        records, feats, tok = synthetic_corpus(synthetic, cfg.region_feature_dim, seed)
    else:
        if not corpus or not features:
            raise click.UsageError("give --corpus and --features, or --synthetic N")
        records, feats = read_corpus(corpus), read_regions(features)
        records = [r for r in records if r.image_id in feats]
        texts = [r.caption for r in records] + [t for r in records for t in r.tag_names]
        tok = WhitespaceTokenizer.from_corpus(texts)
        dims = {rs.feature_dim for rs in feats.values()}
        if len(dims) != 1:
            raise click.ClickException(f"feature store has mixed feature widths {sorted(dims)}")
        cfg = replace(cfg, region_feature_dim=dims.pop())
    if tok.vocab_size > cfg.vocab_size:
        cfg = replace(cfg, vocab_size=tok.vocab_size)
    settings = {"config": config_to_dict(cfg), "steps": steps, "seed": seed, "batch_size": batch_size, "lr": lr,
                "loss_weights": [mlm_weight, itm_weight], "corpus": corpus, "synthetic": synthetic}
    run = make_run_dir("pretrain", hash_payload(settings), seed, out, {"settings": settings})
    weights = (mlm_weight, itm_weight)
    eval_batches = fixed_batches(records, feats, tok, cfg, batch_size, seed + 1)
    from .fusion import build_transformer

    initial = evaluate_loss(build_transformer(cfg, seed=seed), eval_batches, weights)
    model, history = train(records, feats, tok, cfg, steps, seed, batch_size, lr, weights, log_every=20, logger=log)
    final = evaluate_loss(model, eval_batches, weights)
    save_checkpoint(model, run / "model.npz", {"transformer": config_to_dict(cfg), "vocab": tok.vocab})
    metrics = {"initial_loss": initial, "final_loss": final, "history": history}
    (run / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    click.echo(json.dumps({"run": str(run), "initial_loss": initial, "final_loss": final}))


# -- downstream -------------------------------------------------------------


def _load_model(weights, config, feature_dim, texts, seed):
    """(model, tokenizer). Weights carry their config and vocabulary; otherwise seeded random."""
    from .checkpoint import load_checkpoint, read_manifest
    from .fusion import WhitespaceTokenizer, build_transformer

    if weights:
        meta = read_manifest(weights)["meta"]
        if "transformer" not in meta:
            raise click.ClickException(f"{weights}: checkpoint lacks a transformer config")
        cfg = config_from_dict(meta["transformer"])
        model = build_transformer(cfg, seed=None)
        model.load_state_dict(load_checkpoint(weights))
        tok = WhitespaceTokenizer(meta.get("vocab", [])[5:])
    else:
        cfg = replace(_arch(config, TransformerConfig), region_feature_dim=feature_dim)
        tok = WhitespaceTokenizer.from_corpus(texts)
        if tok.vocab_size > cfg.vocab_size:
            cfg = replace(cfg, vocab_size=tok.vocab_size)
        model = build_transformer(cfg, seed=seed)
    if cfg.region_feature_dim != feature_dim:
        raise click.ClickException(f"model expects {cfg.region_feature_dim}-d features, store has {feature_dim}")
    return model.eval(), tok


def _store(features):
    from .detector import read_regions

    regions = read_regions(features)
    if not regions:
        raise click.ClickException(f"{features}: empty feature store")
    return regions, next(iter(regions.values())).feature_dim


def _head(head_cls, hidden, weights, seed):
    import torch

    from .checkpoint import load_into

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        head = head_cls(hidden)
    if weights:
        load_into(head, weights)
    return head.eval()


weights_opt = click.option("--weights", type=click.Path(exists=True, dir_okay=False), default=None,
                           help="Transformer checkpoint; seeded random weights when omitted.")
config_opt = click.option("--config", "config", default="toy", show_default=True,
                          help="Transformer preset when no weights are given.")
seed_opt = click.option("--seed", default=0, show_default=True)
out_opt = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Also write JSON here.")


@main.command()
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@weights_opt
@config_opt
@click.option("--image-id", multiple=True, help="Restrict to these images.")
@click.option("--max-len", default=20, show_default=True)
@seed_opt
@out_opt
def caption(features, weights, config, image_id, max_len, seed, out):
    """Greedy captions for images in a feature store."""
    from .heads import caption_generate

    regions, dim = _store(features)
    ids = list(image_id) or list(regions)
    model, tok = _load_model(weights, config, dim, [t for r in regions.values() for t in r.tags], seed)
    results = []
    for i in ids:
        if i not in regions:
            raise click.ClickException(f"image {i!r} not in {features}")
        rs = regions[i]
        st = caption_generate(model, rs, tok.encode(" ".join(rs.tags)), max_len=max_len, specials=tok.specials)
        results.append({"image_id": i, "caption": tok.decode(st.tokens), "tokens": st.tokens,
                        "log_probs": st.log_probs})
    _emit({"captions": results, "random_weights": weights is None}, out)


@main.command()
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--question", required=True)
@click.option("--image-id", default=None, help="Image to ask about (default: first in store).")
@click.option("--head-weights", type=click.Path(exists=True, dir_okay=False), default=None)
@weights_opt
@config_opt
@seed_opt
@out_opt
def vqa(features, question, image_id, head_weights, weights, config, seed, out):
    """Answer index and confidence over the 3129-way answer set."""
    from .heads import VQAHead, vqa_predict

    regions, dim = _store(features)
    image_id = image_id or next(iter(regions))
    rs = regions[image_id]
    model, tok = _load_model(weights, config, dim, [question, *rs.tags], seed)
    head = _head(VQAHead, model.cfg.hidden_size, head_weights, seed)
    idx, conf = vqa_predict(model, head, rs, tok.encode(" ".join(rs.tags)), tok.encode(question), tok.specials)
    _emit({"image_id": image_id, "question": question, "answer_index": idx, "confidence": conf}, out)


@main.command()
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--left", required=True)
@click.option("--right", required=True)
@click.option("--description", required=True)
@click.option("--head-weights", type=click.Path(exists=True, dir_okay=False), default=None)
@weights_opt
@config_opt
@seed_opt
@out_opt
def nlvr2(features, left, right, description, head_weights, weights, config, seed, out):
    """Is the description true of the image pair?"""
    from .heads import NLVR2Head, nlvr2_predict

    regions, dim = _store(features)
    for i in (left, right):
        if i not in regions:
            raise click.ClickException(f"image {i!r} not in {features}")
    l, r = regions[left], regions[right]
    model, tok = _load_model(weights, config, dim, [description, *l.tags, *r.tags], seed)
    head = _head(NLVR2Head, model.cfg.hidden_size, head_weights, seed)
    ok, conf = nlvr2_predict(model, head, l, r, tok.encode(description), tok.encode(" ".join(l.tags)),
                             tok.encode(" ".join(r.tags)), tok.specials)
    _emit({"left": left, "right": right, "description": description, "label": ok, "confidence": conf}, out)


@main.command()
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--captions", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON lines of {image_id, caption}; each line is a ground-truth pair.")
@click.option("--direction", type=click.Choice(["t2i", "i2t", "both"]), default="both", show_default=True)
@click.option("--k", "ks", default="1,5,10", show_default=True)
@weights_opt
@config_opt
@seed_opt
@out_opt
def retrieve(features, captions, direction, ks, weights, config, seed, out):
    """Exhaustive image-text scoring and recall@K."""
    from .heads import recall_at_k, score_matrix

    regions, dim = _store(features)
    with open(captions, encoding="utf-8") as fh:
        pairs = [json.loads(line) for line in fh if line.strip()]
    image_ids = sorted({p["image_id"] for p in pairs})
    missing = [i for i in image_ids if i not in regions]
    if missing:
        raise click.ClickException(f"images without features: {missing[:5]}")
    texts = [p["caption"] for p in pairs]
    model, tok = _load_model(weights, config, dim, texts + [t for i in image_ids for t in regions[i].tags], seed)
    images = [(regions[i], tok.encode(" ".join(regions[i].tags))) for i in image_ids]
    scores = score_matrix(model, images, [tok.encode(t) for t in texts], tok.specials)
    truth = [(image_ids.index(p["image_id"]), j) for j, p in enumerate(pairs)]
    rec = recall_at_k(scores, truth, _ks(ks))
    if direction != "both":
        rec = {direction: rec[direction]}
    _emit({"recall": {d: {str(k): v for k, v in r.items()} for d, r in rec.items()},
           "num_images": len(image_ids), "num_texts": len(texts)}, out)


# -- harness ----------------------------------------------------------------


@main.command()
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Experiment YAML; the options below are used when omitted.")
@click.option("--detector", default="tee-0", show_default=True)
@click.option("--transformer", default="minilm", show_default=True)
@click.option("--task", type=click.Choice(["vqa", "caption", "retrieval"]), default="vqa", show_default=True)
@click.option("--repetitions", default=3, show_default=True)
@click.option("--threads", default=4, show_default=True)
@seed_opt
@click.option("--out", default=None, help="Run directory (default: under the output root).")
def benchmark(config, detector, transformer, task, repetitions, threads, seed, out):
    """Per-stage wall time (mean +- std) with cost-model figures."""
    from .harness import experiment_from_dict, load_experiment, make_run_dir, run_benchmark, write_result

    try:
        exp = load_experiment(config) if config else experiment_from_dict(
            {"seed": seed, "detector": detector, "transformer": transformer, "task": task,
             "repetitions": repetitions, "threads": threads})
    except (ConfigError, KeyError) as exc:
        raise click.ClickException(str(exc)) from exc
    run = make_run_dir("benchmark", exp.config_hash(), exp.seed, out or exp.output_dir or None,
                       {"config": exp.to_dict()})
    result = run_benchmark(exp)
    write_result(result, run / "benchmark.json")
    for stage, s in result["stages"].items():
        click.echo(f"{stage:<20}{s['mean_ms']:>10.1f} +- {s['std_ms']:.1f} ms")
    click.echo(str(run / "benchmark.json"))


@main.command()
@click.argument("target")
@click.option("--out", default=None, help="Run directory (default: under the output root).")
def reproduce(target, out):
    """Grade a cost table (table1|table2|table3|table4|table8|all); nonzero exit on any failure."""
    from .harness import TARGETS, all_passed, make_run_dir
    from .harness import reproduce as grade
    from .harness.reference import REFERENCE_VERSION

    targets = TARGETS if target == "all" else (target,)
    try:
        results = {t: grade(t) for t in targets}
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    run = make_run_dir("reproduce", f"{target}-ref{REFERENCE_VERSION}", None, out)
    ok = True
    for t, cells in results.items():
        for c in cells:
            click.echo(c.line())
        (run / f"{t}.json").write_text(json.dumps([c.to_dict() for c in cells], indent=2) + "\n")
        ok &= all_passed(cells)
    click.echo("ALL PASS" if ok else "FAILURES PRESENT")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":  # pragma: no cover
    main()
