"""Stage timings for detector -> fusion transformer -> task head."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import torch

from ..cost_model import count_arch
from ..detector.tee import build_detector
from ..fusion.inputs import assemble_input
from ..fusion.model import build_transformer
from ..heads.classifiers import VQAHead
from .experiment import ExperimentConfig, environment_fingerprint

BENCH_TEXT_TOKENS = 35


def result_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("benchmark_schema.json").read_text())


def validate_result(result: dict) -> None:
    jsonschema.validate(result, result_schema())


def _images(cfg: ExperimentConfig) -> list[torch.Tensor]:
    from ..detector.tee import preprocess_image

    size = cfg.detector.image_size
    if cfg.inputs:
        from PIL import Image

        return [preprocess_image(Image.open(p), size)[0] for p in cfg.inputs]
    rng = np.random.default_rng(cfg.seed)
    return [preprocess_image(rng.integers(0, 256, (size, size, 3), dtype=np.uint8), size)[0]]


def _stat(samples: list[float]) -> dict:
    return {"mean_ms": statistics.fmean(samples), "std_ms": statistics.stdev(samples), "samples_ms": samples}


def run_benchmark(cfg: ExperimentConfig) -> dict:
    """Time each stage ``cfg.repetitions`` times after one untimed warm-up pass."""
    if cfg.repetitions < 3:
        raise ValueError("benchmarks need at least 3 repetitions")
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(cfg.threads)
    try:
        det_cfg = cfg.detector if cfg.score_floor is None else replace(cfg.detector, score_floor=cfg.score_floor)
        detector = build_detector(det_cfg, seed=cfg.seed)
        tcfg = replace(cfg.transformer, region_feature_dim=det_cfg.feature_dim)
        model = build_transformer(tcfg, seed=cfg.seed)
        head = VQAHead(tcfg.hidden_size).eval()
        images = _images(cfg)
        rng = np.random.default_rng(cfg.seed)
        text = rng.integers(5, tcfg.vocab_size, BENCH_TEXT_TOKENS - 3).tolist()

        def extract(img):
            return detector.extract_regions(img, "bench", max_regions=det_cfg.max_regions)

        def fuse(regions):
            inp = assemble_input(regions, [], text, "vqa" if cfg.task != "caption" else "caption",
                                 max_length=tcfg.max_positions, feature_dim=tcfg.region_feature_dim)
            with torch.no_grad():
                return model(inp, with_vocab=cfg.task == "caption")

        def task_head(out):
            with torch.no_grad():
                if cfg.task == "vqa":
                    return torch.sigmoid(head(out.pooled))
                if cfg.task == "retrieval":
                    return torch.softmax(out.itm_logits, -1)
                return out.mlm_logits.argmax(-1)

        regions = extract(images[0])
        task_head(fuse(regions))  # warm-up: kernel compilation, allocator
        times = {"feature_extraction": [], "fusion_forward": [], "task_head": []}
        for r in range(cfg.repetitions):
            img = images[r % len(images)]
            t0 = time.perf_counter()
            regions = extract(img)
            t1 = time.perf_counter()
            out = fuse(regions)
            t2 = time.perf_counter()
            task_head(out)
            t3 = time.perf_counter()
            times["feature_extraction"].append((t1 - t0) * 1e3)
            times["fusion_forward"].append((t2 - t1) * 1e3)
            times["task_head"].append((t3 - t2) * 1e3)
        det_cost = count_arch(det_cfg)
        tr_cost = count_arch(tcfg, (det_cfg.max_regions, BENCH_TEXT_TOKENS))
        result = {
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "repetitions": cfg.repetitions,
            "num_regions": len(regions),
            "num_text_tokens": BENCH_TEXT_TOKENS,
            "stages": {k: _stat(v) for k, v in times.items()},
            "cost": {"detector": {"name": det_cost.name, "params": det_cost.params, "flops": det_cost.flops},
                     "transformer": {"name": tr_cost.name, "params": tr_cost.params, "flops": tr_cost.flops}},
            "environment": environment_fingerprint(cfg.threads),
            "config": cfg.to_dict(),
        }
    finally:
        torch.set_num_threads(prev_threads)
    validate_result(result)
    return result


def write_result(result: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return path
