"""Training loop: Adam on the discrete L2 reconstruction loss.

Inputs are the 4-channel (state, gradient) stacks, targets the 2-channel
converged states.  The loss carries the cell-area quadrature weight, so it
equals the squared continuous L2 distance on the grid:

    L(pred, target) = cell_area * sum((pred - target)^2).

Augmentation flips both spatial axes independently with probability 1/2,
applied jointly to input and target so the supervised pairing survives.
Validation runs without augmentation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset as TorchDataset

from .export import export_weights
from .gpds import Dataset as GpdsDataset, read_gpds
from .model import CorrectionUnet, default_widths, gradient_step_init


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4  # initial rate; see lr_schedule
    lr_schedule: str = "constant"  # "constant" or "cosine" (decay to ~0)
    init: str = "default"  # "default" or "gradient_step" (solver-step warm start)
    batch_size: int = 16
    val_fraction: float = 0.1
    flip_p: float = 0.5
    base_width: int = 64
    seed: int = 0
    num_threads: int = 1  # single-threaded for run-to-run reproducibility

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.init not in ("default", "gradient_step"):
            raise ValueError(f"unknown init scheme {self.init!r}")

    def widths(self) -> tuple[int, ...]:
        return default_widths(self.base_width)


class TrajectorySamples(TorchDataset):
    """(state, gradient) -> target pairs, channels-first float32."""

    def __init__(self, data: GpdsDataset, indices, *, augment: bool,
                 flip_p: float = 0.5):
        self.data = data
        self.indices = list(indices)
        self.augment = augment
        self.flip_p = flip_p

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, i):
        s = self.data.samples[self.indices[i]]
        x = np.concatenate([s.state, s.grad], axis=-1).transpose(2, 0, 1)
        y = s.target.transpose(2, 0, 1)
        x = torch.from_numpy(np.ascontiguousarray(x))
        y = torch.from_numpy(np.ascontiguousarray(y))
        if self.augment:
            if torch.rand(()) < self.flip_p:
                x = torch.flip(x, dims=(1,))
                y = torch.flip(y, dims=(1,))
            if torch.rand(()) < self.flip_p:
                x = torch.flip(x, dims=(2,))
                y = torch.flip(y, dims=(2,))
        return x, y


def l2_loss(pred: torch.Tensor, target: torch.Tensor, cell_area: float) -> torch.Tensor:
    """Cell-area weighted squared L2 distance, averaged over the batch."""
    per_sample = ((pred - target) ** 2).sum(dim=(1, 2, 3))
    return cell_area * per_sample.mean()


def split_indices(count: int, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(count)
    n_val = max(1, int(round(val_fraction * count))) if count > 1 else 0
    return order[n_val:].tolist(), order[:n_val].tolist()


def evaluate(model, loader, cell_area: float) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for x, y in loader:
            loss = l2_loss(model(x), y, cell_area)
            total += float(loss) * x.shape[0]
            count += x.shape[0]
    return total / max(count, 1)


def train(dataset_path, cfg: TrainConfig, *, out_archive=None,
          sidecar_path=None, loss_csv=None, progress=None):
    """Train on a GPDS file; returns (model, history).

    ``history`` holds one dict per epoch with train/val losses.  When
    ``out_archive`` is given, the trained weights are exported there in the
    GPUW layout together with the JSON topology sidecar.
    """
    data = read_gpds(dataset_path)
    torch.set_num_threads(cfg.num_threads)
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True)

    model = CorrectionUnet(widths=cfg.widths())
    if cfg.init == "gradient_step":
        gradient_step_init(model)
    if data.n % model.pool_factor != 0:
        raise ValueError(
            f"grid size {data.n} not divisible by the pooling factor "
            f"{model.pool_factor}"
        )
    train_idx, val_idx = split_indices(len(data), cfg.val_fraction, cfg.seed)
    train_set = TrajectorySamples(data, train_idx, augment=True, flip_p=cfg.flip_p)
    val_set = TrajectorySamples(data, val_idx, augment=False)
    loader_gen = torch.Generator()
    loader_gen.manual_seed(cfg.seed)
    train_loader = DataLoader(train_set, batch_size=cfg.batch_size, shuffle=True,
                              generator=loader_gen, num_workers=0)
    val_loader = DataLoader(val_set, batch_size=cfg.batch_size, shuffle=False,
                            num_workers=0)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    scheduler = None
    if cfg.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=cfg.epochs
        )
    cell = data.cell_area
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for x, y in train_loader:
            optimizer.zero_grad()
            loss = l2_loss(model(x), y, cell)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * x.shape[0]
            count += x.shape[0]
        if scheduler is not None:
            scheduler.step()
        record = {
            "epoch": epoch,
            "train_loss": total / max(count, 1),
            "val_loss": evaluate(model, val_loader, cell) if val_idx else None,
        }
        history.append(record)
        if progress is not None:
            progress(record)

    if out_archive is not None:
        export_weights(model, out_archive, sidecar_path=sidecar_path, extra={
            "train_n": data.n,
            "box_width": data.box_width,
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
        })
    if loss_csv is not None:
        with open(loss_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss"])
            writer.writeheader()
            writer.writerows(history)
    return model, history
