"""Unpaired adversarial training: alternating D/G steps, lr schedule, checkpoints, JSONL log."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from .config import TrainConfig, config_from_dict
from .data import split_slice
from .metric import PairScheme, metric_loss_tensor, sample_anchor_locations
from .networks import (Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ProjectionHead,
                       ProjectionSpec, load_checkpoint, save_checkpoint)
from .objectives import (LossWeights, NonFiniteLossError, gan_loss_discriminator, gan_loss_generator,
                         identity_loss, total_generator_loss)

log = logging.getLogger(__name__)

LOG_KEYS = ("epoch", "step", "lr", "L_gan_G", "L_gan_D", "L_idt", "L_m1", "L_m2", "L_total")


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Constant for the first half of training, then linear decay to zero at ``cfg.epochs``."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    half = cfg.epochs / 2
    if epoch < half:
        return cfg.lr
    return cfg.lr * (cfg.epochs - epoch) / (cfg.epochs - half)


def generator_spec(cfg: TrainConfig) -> GeneratorSpec:
    return GeneratorSpec(base_channels=cfg.base_channels, num_rrdb_blocks=cfg.num_rrdb_blocks,
                         growth_channels=cfg.growth_channels)


def build_generator(cfg: TrainConfig) -> Generator:
    return Generator(generator_spec(cfg))


def _f(t: Tensor) -> float:
    return float(t.detach())


def _anchor_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class Trainer:
    """Owns G (with projection heads), D and both optimizers.

    ``discriminator`` may be replaced by any module; one without parameters
    is never updated (useful for freezing the adversarial term).
    """

    def __init__(self, cfg: TrainConfig, discriminator: nn.Module | None = None):
        self.cfg = cfg
        if cfg.deterministic:
            torch.use_deterministic_algorithms(True)
        torch.manual_seed(cfg.seed)
        self.G = build_generator(cfg)
        pspec = ProjectionSpec(cfg.embed_dim, cfg.proj_downsample, cfg.proj_hidden_dim)
        self.P1 = ProjectionHead(cfg.base_channels, pspec)
        self.P2 = ProjectionHead(cfg.base_channels, pspec)
        self.D = discriminator if discriminator is not None else Discriminator(
            DiscriminatorSpec(cfg.disc_num_blocks, cfg.disc_base_channels))
        self.weights = LossWeights(cfg.lambda_idt, cfg.lambda_m, cfg.tau)
        betas = (cfg.beta1, cfg.beta2)
        gen_params = [*self.G.parameters(), *self.P1.parameters(), *self.P2.parameters()]
        self.opt_G = torch.optim.Adam(gen_params, lr=cfg.lr, betas=betas)
        d_params = list(self.D.parameters())
        self.opt_D = torch.optim.Adam(d_params, lr=cfg.lr, betas=betas) if d_params else None
        self.epoch = 0
        self.last_pairs: dict | None = None

    # -- state -----------------------------------------------------------------

    def modules(self) -> dict:
        return {"G": self.G, "P1": self.P1, "P2": self.P2, "D": self.D}

    def optimizers(self) -> dict:
        opts = {"G": self.opt_G}
        if self.opt_D is not None:
            opts["D"] = self.opt_D
        return opts

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers().values():
            for group in opt.param_groups:
                group["lr"] = lr

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.modules(), self.optimizers(), self.cfg.to_dict(), self.epoch, extra)

    @classmethod
    def from_checkpoint(cls, path, discriminator: nn.Module | None = None) -> "Trainer":
        payload = load_checkpoint(path)
        trainer = cls(config_from_dict(payload["config"]), discriminator)
        for name, module in trainer.modules().items():
            module.load_state_dict(payload["modules"][name])
        for name, opt in trainer.optimizers().items():
            opt.load_state_dict(payload["optimizers"][name])
        trainer.epoch = payload["epoch"]
        return trainer

    # -- one iteration -------------------------------------------------------------

    def anchor_locations(self, batch: int, grid, tag=(0, 0)) -> np.ndarray:
        """(B, K, 2) anchors; a pure function of (seed, tag, batch index)."""
        return np.stack([
            sample_anchor_locations(grid, PairScheme(self.cfg.num_anchor_locations,
                                                     _anchor_seed(self.cfg.seed, *tag, b)))
            for b in range(batch)
        ])

    def _metric_terms(self, fx, fo, locations) -> tuple[Tensor, Tensor]:
        terms = []
        for head, f_in, f_out in zip((self.P1, self.P2), fx, fo):
            z = head.sample(f_in, locations)
            w = head.sample(f_out, locations)
            terms.append(metric_loss_tensor(z, w, self.cfg.tau))
        return terms[0], terms[1]

    def train_step(self, batch_x: Tensor, batch_y: Tensor, tag=(0, 0)) -> dict:
        """One D update then one G update on normalized HF crops (B, 1, H, W).

        ``tag`` (usually ``(epoch, step)``) seeds the anchor sampling.
        """
        for m in self.modules().values():
            m.train()
        y_hat, fx1, fx2 = self.G(batch_x)

        if self.opt_D is not None:
            self.D.requires_grad_(True)
            self.opt_D.zero_grad(set_to_none=True)
            loss_d = gan_loss_discriminator(self.D(batch_y), self.D(y_hat.detach()))
            loss_d.backward()
            self.opt_D.step()
        else:
            with torch.no_grad():
                loss_d = gan_loss_discriminator(self.D(batch_y), self.D(y_hat))

        self.D.requires_grad_(False)
        try:
            loss_gan = gan_loss_generator(self.D(y_hat))
            g_y, _, _ = self.G(batch_y)
            loss_idt = identity_loss(g_y, batch_y)
            fo1, fo2 = self.G.features(y_hat)
            grid = self.P1.grid_shape(fx1.shape)
            locations = self.anchor_locations(batch_x.shape[0], grid, tag)
            m1, m2 = self._metric_terms((fx1, fx2), (fo1, fo2), locations)
            record = {"L_gan_G": _f(loss_gan), "L_gan_D": _f(loss_d), "L_idt": _f(loss_idt),
                      "L_m1": _f(m1), "L_m2": _f(m2)}
            try:
                total = total_generator_loss(loss_gan, loss_idt, m1, m2, self.weights)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"{exc}; record={record}") from None
            if not math.isfinite(_f(loss_d)):
                raise NonFiniteLossError(f"non-finite discriminator loss; record={record}")
            self.opt_G.zero_grad(set_to_none=True)
            total.backward()
            self.opt_G.step()
        finally:
            self.D.requires_grad_(True)
        record["L_total"] = _f(total)
        if self.cfg.debug_pairs:
            self.last_pairs = {"grid": tuple(grid), "z_locations": locations, "w_locations": locations,
                               "tag": tuple(tag)}
        return record


# -- data feeding ----------------------------------------------------------------

class HFDomain:
    """Whole-slice HF images of one domain, normalized by ``cfg.hf_scale``."""

    def __init__(self, images, cfg: TrainConfig):
        if not images:
            raise ValueError("empty dataset")
        self.hf = [split_slice(img, cfg)[0] / cfg.hf_scale for img in images]
        for h in self.hf:
            if min(h.shape) < cfg.crop:
                raise ValueError(f"slice {h.shape} smaller than crop {cfg.crop}")

    def __len__(self) -> int:
        return len(self.hf)

    def crops(self, indices, size: int, rng: np.random.Generator) -> Tensor:
        out = np.empty((len(indices), 1, size, size), dtype=np.float32)
        for i, idx in enumerate(indices):
            h, w = self.hf[idx].shape
            r, c = int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))
            out[i, 0] = self.hf[idx][r:r + size, c:c + size]
        return torch.from_numpy(out)


def steps_per_epoch(n_x: int, n_y: int, batch_size: int) -> int:
    return max(1, max(n_x, n_y) // batch_size)


def _epoch_order(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    reps = -(-count // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def epoch_batches(dom_x: HFDomain, dom_y: HFDomain, cfg: TrainConfig, epoch: int):
    """Yield (step, x, y); the sequence depends only on (seed, epoch)."""
    rng = np.random.default_rng([cfg.seed, epoch])
    n_steps = steps_per_epoch(len(dom_x), len(dom_y), cfg.batch_size)
    order_x = _epoch_order(len(dom_x), n_steps * cfg.batch_size, rng)
    order_y = _epoch_order(len(dom_y), n_steps * cfg.batch_size, rng)
    for step in range(n_steps):
        sl = slice(step * cfg.batch_size, (step + 1) * cfg.batch_size)
        x = dom_x.crops(order_x[sl], cfg.crop, rng)
        y = dom_y.crops(order_y[sl], cfg.crop, rng)
        yield step, x, y


@dataclass
class FitResult:
    trainer: Trainer
    checkpoints: list = field(default_factory=list)
    records: list = field(default_factory=list)
    log_path: Path | None = None


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_epoch_{epoch:04d}.pt"


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def fit(dataset_x, dataset_y, cfg: TrainConfig, out_dir, resume=None, discriminator=None,
        max_epochs: int | None = None) -> FitResult:
    """Train for ``cfg.epochs`` epochs, writing one checkpoint per epoch and a JSONL step log.

    ``resume`` is a checkpoint path; training continues from its epoch and the
    log is truncated to the rows written before that epoch. ``max_epochs``
    stops early (after that many epochs in total) without changing the
    schedule.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, discriminator)
        cfg = trainer.cfg
    else:
        trainer = Trainer(cfg, discriminator)
    dom_x, dom_y = HFDomain(dataset_x, cfg), HFDomain(dataset_y, cfg)
    n_steps = steps_per_epoch(len(dom_x), len(dom_y), cfg.batch_size)

    log_path = out_dir / "train_log.jsonl"
    records = [r for r in read_log(log_path) if r["epoch"] < trainer.epoch] if (
        resume is not None and log_path.exists()) else []
    with open(log_path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")

    result = FitResult(trainer, records=records, log_path=log_path)
    last = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    for epoch in range(trainer.epoch, last):
        lr = lr_at_epoch(epoch, cfg)
        trainer.set_lr(lr)
        with open(log_path, "a") as fh:
            for step, x, y in epoch_batches(dom_x, dom_y, cfg, epoch):
                rec = trainer.train_step(x, y, tag=(epoch, step))
                row = {"epoch": epoch, "step": epoch * n_steps + step, "lr": lr, **rec}
                fh.write(json.dumps({k: row[k] for k in LOG_KEYS}) + "\n")
                fh.flush()
                result.records.append(row)
        trainer.epoch = epoch + 1
        path = out_dir / checkpoint_name(trainer.epoch)
        trainer.save(path, extra={"steps_per_epoch": n_steps})
        result.checkpoints.append(path)
        log.info("epoch %d/%d done, lr=%.3g, last L_total=%.4g", epoch + 1, cfg.epochs, lr,
                 result.records[-1]["L_total"])
    return result


def load_generator(path) -> tuple[Generator, TrainConfig]:
    """Generator and config from a training checkpoint, in eval mode."""
    payload = load_checkpoint(path)
    cfg = config_from_dict(payload["config"])
    gen = build_generator(cfg)
    gen.load_state_dict(payload["modules"]["G"])
    gen.eval()
    return gen, cfg
