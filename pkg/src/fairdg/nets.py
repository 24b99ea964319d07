"""Small fully-connected networks, minibatching and checkpoint files.

Everything runs in float64 on the CPU; parameter initialisation draws
from an explicit ``torch.Generator`` so models are reproducible without
touching the global RNG.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .data import DomainDataset
from .errors import CheckpointError, NonFiniteLoss

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


def generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) % (2**63))
    return g


def mlp(sizes: Sequence[int], rng: torch.Generator, out_activation: nn.Module | None = None) -> nn.Sequential:
    """Linear layers with ReLU between them and no activation on the output."""
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        lin = nn.Linear(a, b, dtype=DTYPE)
        bound = 1.0 / math.sqrt(a)
        with torch.no_grad():
            lin.weight.uniform_(-bound, bound, generator=rng)
            lin.bias.uniform_(-bound, bound, generator=rng)
        layers.append(lin)
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    if out_activation is not None:
        layers.append(out_activation)
    return nn.Sequential(*layers)


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.tensor(np.asarray(x, dtype=np.float64))


class Batch(NamedTuple):
    x: torch.Tensor
    z: torch.Tensor  # float, values in {-1, +1}
    y: torch.Tensor  # long, values in {0, 1}

    @classmethod
    def from_dataset(cls, ds: DomainDataset, index=None) -> "Batch":
        if index is None:
            index = np.arange(len(ds))
        return cls(
            torch.as_tensor(ds.features[index]),
            torch.as_tensor(ds.sensitive[index].astype(np.float64)),
            torch.as_tensor(ds.label[index]),
        )

    def __len__(self):
        return len(self.y)


class BatchSampler:
    """Endless epoch-wise shuffled minibatches over a pooled dataset."""

    def __init__(self, dataset: DomainDataset, batch_size: int, rng: torch.Generator):
        if len(dataset) == 0:
            raise ValueError("cannot sample batches from an empty dataset")
        self.full = Batch.from_dataset(dataset)
        self.batch_size = min(batch_size, len(dataset))
        self.rng = rng
        self._order = torch.empty(0, dtype=torch.long)
        self._pos = 0

    def next(self) -> Batch:
        if self._pos + self.batch_size > len(self._order):
            self._order = torch.randperm(len(self.full), generator=self.rng)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return Batch(self.full.x[idx], self.full.z[idx], self.full.y[idx])


def check_finite(value: torch.Tensor | float, iteration: int, name="loss"):
    v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(v):
        raise NonFiniteLoss(iteration, name)
    return v


def save_checkpoint(module: nn.Module, path, kind: str, meta: dict):
    """Write parameters plus JSON metadata as an ``.npz`` container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"version": CHECKPOINT_VERSION, "kind": kind, **meta}
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    buf = io.BytesIO()
    # fixed timestamps keep the container byte-stable across runs
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("__meta__.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(header, sort_keys=True))
        for name in sorted(arrays):
            arr_buf = io.BytesIO()
            np.save(arr_buf, arrays[name], allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), arr_buf.getvalue())
    path.write_bytes(buf.getvalue())


def read_checkpoint(path, kind: str):
    """Return ``(meta, state_dict)``; fails loudly on kind or version mismatch."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    with zf:
        meta = json.loads(zf.read("__meta__.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: version {meta.get('version')} != {CHECKPOINT_VERSION}")
        if meta.get("kind") != kind:
            raise CheckpointError(f"{path}: holds a {meta.get('kind')!r}, expected {kind!r}")
        state = {}
        for name in zf.namelist():
            if name.startswith("param/"):
                state[name[len("param/"):-len(".npy")]] = torch.as_tensor(
                    np.load(io.BytesIO(zf.read(name)), allow_pickle=False))
    return meta, state


def load_state_strict(module: nn.Module, state: dict, path=""):
    own = module.state_dict()
    if set(own) != set(state):
        raise CheckpointError(f"{path}: parameter names differ from the model")
    for k, v in state.items():
        if tuple(own[k].shape) != tuple(v.shape):
            raise CheckpointError(f"{path}: shape of {k} is {tuple(v.shape)}, model expects {tuple(own[k].shape)}")
    module.load_state_dict(state)
