"""Experiment configs, run directories and environment fingerprints."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..configs import ConfigError, DetectorConfig, TransformerConfig, config_from_dict, config_to_dict, get_preset

OUTPUT_ROOT_ENV = "MINIVLM_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def _resolve_arch(ref: Any, family: type) -> Any:
    arch = get_preset(ref) if isinstance(ref, str) else config_from_dict(ref)
    if not isinstance(arch, family):
        raise ConfigError(f"expected a {family.__name__}, got {type(arch).__name__}")
    return arch


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    detector: DetectorConfig
    transformer: TransformerConfig
    task: str = "vqa"
    inputs: tuple[str, ...] = ()
    output_dir: str = ""
    repetitions: int = 3
    threads: int = 4
    score_floor: float | None = 0.0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed is mandatory and must be an integer")
        if self.repetitions < 3:
            raise ConfigError(f"benchmarks need at least 3 repetitions, got {self.repetitions}")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.task not in ("caption", "vqa", "retrieval"):
            raise ConfigError(f"unsupported benchmark task {self.task!r}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["detector"] = config_to_dict(self.detector)
        d["transformer"] = config_to_dict(self.transformer)
        d["inputs"] = list(self.inputs)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_ALLOWED = {"seed", "detector", "transformer", "task", "inputs", "output_dir", "repetitions", "threads", "score_floor"}


def experiment_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    extra = set(data) - _ALLOWED
    if extra:
        raise ConfigError(f"unknown experiment keys: {sorted(extra)}")
    if "seed" not in data:
        raise ConfigError("seed is mandatory")
    base = base_dir or Path.cwd()
    inputs = tuple(str((base / p).resolve()) for p in data.get("inputs", ()))
    out = data.get("output_dir", "")
    return ExperimentConfig(
        seed=data["seed"],
        detector=_resolve_arch(data.get("detector", "tee-0"), DetectorConfig),
        transformer=_resolve_arch(data.get("transformer", "minilm"), TransformerConfig),
        task=data.get("task", "vqa"),
        inputs=inputs,
        output_dir=str((base / out).resolve()) if out else "",
        repetitions=int(data.get("repetitions", 3)),
        threads=int(data.get("threads", 4)),
        score_floor=data.get("score_floor", 0.0),
    )


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return experiment_from_dict(data, path.parent)


def environment_fingerprint(threads: int | None = None) -> dict:
    import numpy
    import torch

    from ..kernels import backend_name

    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "torch": torch.__version__,
        "numpy": numpy.__version__,
        "numba": numba_version,
        "kernel_backend": backend_name(),
        "torch_threads": threads if threads is not None else torch.get_num_threads(),
    }


def make_run_dir(verb: str, config_hash: str, seed: int | None, explicit: str | Path | None = None,
                 extra: Mapping[str, Any] | None = None) -> Path:
    """Create the run directory and write ``run.json`` (hash, seed, fingerprint)."""
    run = Path(explicit) if explicit else output_root() / f"{verb}-{config_hash}"
    run.mkdir(parents=True, exist_ok=True)
    manifest = {"verb": verb, "config_hash": config_hash, "seed": seed,
                "environment": environment_fingerprint(), **(extra or {})}
    (run / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run


def hash_payload(payload: Any) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]
