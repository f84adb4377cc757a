"""Checkpoint directories: ``manifest.json`` plus one little-endian binary per tensor.

The manifest records the model config, schedule, training options, loss
weights, seed, counters and the numpy RNG state, and for every tensor its
name, shape, dtype and file.  Saving the same state twice yields
byte-identical directories.
"""
import dataclasses
import json
import shutil
from pathlib import Path

import numpy as np
import torch

from .config import LossWeights, ModelConfig, Schedule, TrainOptions
from .errors import ConfigError

FORMAT = "cycmunet-checkpoint"
VERSION = 1
GROUPS = ("params", "exp_avg", "exp_inf")


def _tensor_file(group, name):
    return f"{group}/{name}.bin"


def save_checkpoint(state, directory):
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tensors = []
    for group in GROUPS:
        (tmp / group).mkdir(parents=True)
        for name, t in getattr(state, group).items():
            arr = t.detach().cpu().numpy().astype("<f4")
            rel = _tensor_file(group, name)
            arr.tofile(tmp / rel)
            tensors.append({"group": group, "name": name, "file": rel,
                            "shape": list(arr.shape), "dtype": "<f4"})
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": dataclasses.asdict(state.config),
        "schedule": dataclasses.asdict(state.schedule),
        "options": dataclasses.asdict(state.options),
        "loss_weights": dataclasses.asdict(state.loss_weights),
        "seed": state.seed,
        "step": state.step,
        "epoch": state.epoch,
        "best_psnr": state.best_psnr,
        "rng_state": state.rng.bit_generator.state,
        "tensors": tensors,
    }
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)
    return directory


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint manifest {path}: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a {FORMAT} manifest")
    return manifest


def load_checkpoint(directory):
    # local import: trainer imports this module
    from .trainer import TrainState

    directory = Path(directory)
    manifest = read_manifest(directory)
    config = ModelConfig(**manifest["config"])
    state = TrainState.fresh(
        config,
        seed=manifest["seed"],
        schedule=Schedule(**manifest["schedule"]),
        options=TrainOptions(**manifest["options"]),
        loss_weights=LossWeights(**manifest["loss_weights"]),
    )
    state.step = manifest["step"]
    state.epoch = manifest["epoch"]
    state.best_psnr = manifest["best_psnr"]
    state.rng.bit_generator.state = manifest["rng_state"]
    with torch.no_grad():
        for entry in manifest["tensors"]:
            target = getattr(state, entry["group"]).get(entry["name"])
            if target is None:
                raise ConfigError(f"checkpoint tensor {entry['name']} has no counterpart in the model")
            arr = np.fromfile(directory / entry["file"], dtype=entry["dtype"]).reshape(entry["shape"])
            if tuple(arr.shape) != tuple(target.shape):
                raise ConfigError(f"{entry['name']}: checkpoint shape {arr.shape} != model {tuple(target.shape)}")
            target.copy_(torch.from_numpy(arr.astype(np.float32)))
    return state
