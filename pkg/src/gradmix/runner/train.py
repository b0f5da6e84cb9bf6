"""Training loop: views, attribution-guided mixing, objective, Adam with cosine LR."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..attribution import AttributionMap, layer_maps
from ..augment import cutmix, cutout, gradmix, mixup, sample_gamma, standard_views
from ..autodiff import Graph, backward, ops, tap_gradients
from ..data.formats import ImageDataset
from ..encoder import Encoder, EncoderOutput
from ..losses import LossWeights, ce_and_ce_ssl_loss, contra_loss, cross_entropy, full_objective, simclr_loss
from .checkpoint import Checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .optim import adam_step, cosine_lr

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training aborted; ``dump`` holds the diagnostic record."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainResult:
    encoder: Encoder
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


# -- objectives ---------------------------------------------------------------

def clean_objective(config: RunConfig, out: EncoderOutput, labels, parts: dict | None = None):
    """The configured objective on the clean paired batch (no mixed-view term)."""
    obj = config.objective
    z = out.embeddings
    if obj == "ce":
        ce = cross_entropy(out.logits, labels)
        if parts is not None:
            parts["ce"] = ce
        return ops.scale(ce, config.ce_weight)
    if obj == "ce+ssl":
        return ce_and_ce_ssl_loss(out.logits, labels, z, config.ce_weight, config.lam, config.tau, parts)
    theta = 0.0 if obj == "ssl-only" else config.theta
    lam = 0.0 if obj == "supcon" else config.lam
    return contra_loss(z, labels, LossWeights(theta, lam), config.tau, config.supcon_mode, parts)


def attribution_maps(config: RunConfig, encoder: Encoder, images, partners, labels) -> AttributionMap:
    """Maps for ``images`` from a throwaway pass of the clean objective on [images; partners].

    Batch norm runs in training mode without touching running statistics and
    no gradient reaches the parameters.
    """
    n = len(images)
    g = Graph(encoder.dtype)
    out = encoder.forward(g, np.concatenate([images, partners]), training=True, update_stats=False)
    labels = np.asarray(labels)
    loss = clean_objective(config, out, np.concatenate([labels, labels]))
    backward(g, loss, accumulate=False)
    taps = tap_gradients(g, config.encoder.tap_names).select(slice(0, n))
    return layer_maps(taps, config.encoder.tap_names, images.shape[-1], config.attribution_method)


def _mixed_images(config: RunConfig, x, y, maps, rng):
    """(mixed originals, weight of their SSL term, gamma or None)."""
    aug = config.augmentation
    if aug == "gradmix":
        gamma = sample_gamma(rng, config.gamma_min, config.gamma_max)
        mixed, _ = gradmix(x, maps, gamma, rng)
        return mixed, gamma ** 2, gamma
    if aug == "mixup":
        mixed, info = mixup(x, y, config.mix_alpha, rng)
        return mixed, info.ratio, None
    if aug == "cutmix":
        mixed, info = cutmix(x, y, config.mix_alpha, rng)
        return mixed, info.ratio, None
    if aug == "cutout":
        return cutout(x, config.cutout_size, rng), config.cutout_size ** 2 / x.shape[-1] ** 2, None
    return None, 0.0, None


def train_step(config: RunConfig, encoder: Encoder, x, y, rng, lr: float, t: int, maps=None) -> dict:
    """One optimization step; returns the log record (loss components, gamma)."""
    x = np.asarray(x, dtype=encoder.dtype)
    y = np.asarray(y)
    views = standard_views(x, rng)
    if config.augmentation == "gradmix" and maps is None:
        maps = attribution_maps(config, encoder, x, views.view_b, y)
    mixed, weight, gamma = _mixed_images(config, x, y, maps, rng)

    labels2 = np.concatenate([y, y])
    g = Graph(encoder.dtype)
    out = encoder.forward(g, views.paired(), training=True, update_stats=True, tap=False)
    parts: dict = {}
    if mixed is None:
        loss = clean_objective(config, out, labels2, parts)
    else:
        # running statistics follow the clean views only
        z_mixed = encoder.forward(g, np.concatenate([mixed, views.view_b]), training=True,
                                  update_stats=False, tap=False).embeddings
        if config.objective == "supcon+ssl+gradmix":
            loss = full_objective(out.embeddings, z_mixed, labels2, LossWeights(config.theta, config.lam, gamma),
                                  config.tau, config.supcon_mode, parts)
        else:
            mixed_loss = simclr_loss(z_mixed, config.tau)
            parts["simclr_mixed"] = mixed_loss
            loss = ops.add(clean_objective(config, out, labels2, parts),
                           ops.scale(mixed_loss, config.lam * weight))

    record = {"lr": lr, "loss": float(loss.value.reshape(-1)[0])}
    record.update({k: float(v.value.reshape(-1)[0]) for k, v in sorted(parts.items())})
    if gamma is not None:
        record["gamma"] = gamma
    if mixed is not None:
        record["mix_weight"] = float(weight)
    if not all(np.isfinite(v) for v in record.values()):
        raise TrainingError("non-finite loss", record)
    encoder.zero_grad()
    backward(g, loss)
    adam_step(list(encoder.params.values()), lr, t)
    return record


# -- state --------------------------------------------------------------------

def make_checkpoint(config: RunConfig, encoder: Encoder, epoch: int, t: int, rng: np.random.Generator,
                    meta: dict | None = None) -> Checkpoint:
    tensors = dict(encoder.state_tensors())
    for name, p in encoder.params.items():
        tensors[f"adam.m.{name}"] = p.m
        tensors[f"adam.v.{name}"] = p.v
    return Checkpoint(config.to_dict(), tensors, epoch, t, rng.bit_generator.state, dict(meta or {}))


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[RunConfig, Encoder]:
    """Rebuild the config and encoder (including optimizer moments) from a checkpoint."""
    config = RunConfig.from_dict(ckpt.config)
    encoder = Encoder(config.encoder, seed=config.seed)
    encoder.load_state_tensors(ckpt.tensors)
    for name, p in encoder.params.items():
        if f"adam.m.{name}" in ckpt.tensors:
            p.m = ckpt.tensors[f"adam.m.{name}"].astype(encoder.dtype)
            p.v = ckpt.tensors[f"adam.v.{name}"].astype(encoder.dtype)
    return config, encoder


def _comparable(d: dict) -> dict:
    d = dict(d)
    d.pop("checkpoint_every", None)
    return d


def epoch_lr(config: RunConfig, epoch: int) -> float:
    """Per-epoch cosine schedule: the first epoch uses lr_max, the last lr_min."""
    return cosine_lr(epoch, config.epochs - 1, config.lr_max, config.lr_min)


def train(config: RunConfig, train_set: ImageDataset, *, resume: Checkpoint | None = None,
          stop_after: int | None = None, checkpoint_path=None) -> TrainResult:
    """Train an encoder on ``train_set``.

    ``resume`` continues a run from its checkpoint (the config must match);
    ``stop_after`` ends after that many completed epochs, leaving a resumable
    checkpoint. Batches are drawn without replacement and the ragged tail of
    each shuffled epoch is dropped.
    """
    config.validate()
    n = len(train_set)
    if n < 2:
        raise ConfigError("training needs at least 2 images")
    if config.encoder.has_classifier and train_set.class_count > config.encoder.class_count:
        raise ConfigError(f"classifier has {config.encoder.class_count} outputs, "
                          f"data has {train_set.class_count} classes")
    with threadpool_limits(limits=config.threads):
        if resume is None:
            encoder = Encoder(config.encoder, seed=config.seed)
            rng = np.random.default_rng(config.seed)
            start, t, epoch_losses = 0, 0, []
        else:
            if _comparable(resume.config) != _comparable(config.to_dict()):
                raise ConfigError("resume checkpoint was written by a different configuration")
            _, encoder = model_from_checkpoint(resume)
            rng = np.random.default_rng()
            rng.bit_generator.state = resume.rng_state
            start, t = resume.epoch, resume.adam_t
            epoch_losses = list(resume.meta.get("epoch_losses", []))
        bs = min(config.batch_size, n)
        records: list[dict] = []
        end = config.epochs if stop_after is None else min(config.epochs, stop_after)
        images = train_set.images.astype(encoder.dtype)
        labels = train_set.labels
        for epoch in range(start, end):
            lr = epoch_lr(config, epoch)
            order = rng.permutation(n)
            cached = None
            if config.augmentation == "gradmix" and config.attribution_refresh == "per-epoch":
                cached = _all_maps(config, encoder, images, labels, bs, rng)
            losses = []
            for b in range(n // bs):
                idx = order[b * bs:(b + 1) * bs]
                t += 1
                maps = None if cached is None else cached[idx]
                try:
                    rec = train_step(config, encoder, images[idx], labels[idx], rng, lr, t, maps)
                except TrainingError as exc:
                    exc.dump.update(epoch=epoch, batch=b)
                    raise
                rec = {"epoch": epoch, "batch": b, **rec}
                records.append(rec)
                losses.append(rec["loss"])
            epoch_losses.append(float(np.mean(losses)))
            log.info("epoch %d lr %.3g loss %.4f", epoch, lr, epoch_losses[-1])
            done = epoch + 1
            if checkpoint_path and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_checkpoint(make_checkpoint(config, encoder, done, t, rng, {"epoch_losses": epoch_losses}),
                                checkpoint_path)
        ckpt = make_checkpoint(config, encoder, max(end, start), t, rng, {"epoch_losses": epoch_losses})
        if checkpoint_path:
            save_checkpoint(ckpt, checkpoint_path)
    return TrainResult(encoder, ckpt, records, epoch_losses)


def _all_maps(config, encoder, images, labels, bs, rng) -> np.ndarray:
    maps = []
    for i in range(0, len(images), bs):
        x = images[i:i + bs]
        if len(x) < 2:  # a lone tail image still needs a paired partner batch
            x = images[i - 1:i + 1]
            partners = standard_views(x, rng).view_b
            maps.append(attribution_maps(config, encoder, x, partners, labels[i - 1:i + 1]).values[1:])
            continue
        partners = standard_views(x, rng).view_b
        maps.append(attribution_maps(config, encoder, x, partners, labels[i:i + bs]).values)
    return np.concatenate(maps)
