"""Bi-level disentangling auto-encoder used to synthesise new domains.

Outer level: ``E_m: x -> m`` (content) and ``E_s: x -> s`` (style), decoded
by ``G_o(m, s)``.  Inner level: ``E_c: m -> c`` (semantic) and
``E_a: m -> a`` (sensitive), decoded by ``G_i(c, a)``.  Discriminators
``D_o`` on data and ``D_i`` on content codes, and a sensitive classifier
``h: a -> P(z = +1)``.

A model built with ``inner_level=False`` keeps only the outer level; it
backs the ablation that has no sensitive factor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import DomainDataset, concat
from .errors import DimensionMismatch
from .nets import (DTYPE, Batch, BatchSampler, as_tensor, check_finite, generator,
                   load_state_strict, mlp, read_checkpoint, save_checkpoint)

D_EPS = 1e-6


@dataclass(frozen=True)
class TransformShape:
    input_dim: int
    dim_m: int = 16
    dim_c: int = 8
    dim_a: int = 2
    dim_s: int = 2
    e_m_hidden: tuple = (32,)
    e_s_hidden: tuple = (32,)
    e_c_hidden: tuple = (16,)
    e_a_hidden: tuple = (8,)
    g_i_hidden: tuple = (16,)
    g_o_hidden: tuple = (32,)
    d_o_hidden: tuple = (32, 16)
    d_i_hidden: tuple = (8, 8)
    inner_level: bool = True

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k, v in d.items():
            if k.endswith("_hidden"):
                d[k] = tuple(v)
        return cls(**d)


@dataclass(frozen=True)
class TransformTrainConfig:
    beta1: float = 10.0
    beta2: float = 1.0
    beta3: float = 1.0
    beta4: float = 1.0
    lr_discriminator: float = 1e-4
    lr_autoencoder: float = 1e-4
    lr_sensitive: float = 1e-4
    iterations: int = 2000
    batch_size: int = 64
    seed: int = 0
    # Also pass beta3 * L_sens to the encoders (in addition to h).
    encoder_sensitive: bool = True
    # Also pass beta4 * generator_loss to the encoders/decoders.
    generator_adversarial: bool = False

    def __post_init__(self):
        for k in ("beta1", "beta2", "beta3", "beta4"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        for k in ("lr_discriminator", "lr_autoencoder", "lr_sensitive"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")


class LatentFactors(NamedTuple):
    content_m: torch.Tensor
    semantic_c: torch.Tensor
    sensitive_a: torch.Tensor
    style_s: torch.Tensor


class TransformModel(nn.Module):
    def __init__(self, shape: TransformShape, seed: int = 0):
        super().__init__()
        self.shape = shape
        g = generator(seed)
        sh = shape
        self.e_m = mlp((sh.input_dim, *sh.e_m_hidden, sh.dim_m), g)
        self.e_s = mlp((sh.input_dim, *sh.e_s_hidden, sh.dim_s), g)
        self.g_o = mlp((sh.dim_m + sh.dim_s, *sh.g_o_hidden, sh.input_dim), g)
        self.d_o = mlp((sh.input_dim, *sh.d_o_hidden, 1), g)
        if sh.inner_level:
            self.e_c = mlp((sh.dim_m, *sh.e_c_hidden, sh.dim_c), g)
            self.e_a = mlp((sh.dim_m, *sh.e_a_hidden, sh.dim_a), g)
            self.g_i = mlp((sh.dim_c + sh.dim_a, *sh.g_i_hidden, sh.dim_m), g)
            self.d_i = mlp((sh.dim_m, *sh.d_i_hidden, 1), g)
            self.h = mlp((sh.dim_a, 1), g)
        self.trace: list[dict] = []

    @property
    def inner_level(self) -> bool:
        return self.shape.inner_level

    # parameter groups used by the three optimisers
    def discriminator_parameters(self):
        mods = [self.d_o] + ([self.d_i] if self.inner_level else [])
        return [p for m in mods for p in m.parameters()]

    def autoencoder_parameters(self):
        mods = [self.e_m, self.e_s, self.g_o]
        if self.inner_level:
            mods += [self.e_c, self.e_a, self.g_i]
        return [p for m in mods for p in m.parameters()]

    def sensitive_parameters(self):
        return list(self.h.parameters()) if self.inner_level else []

    def inner_decode(self, c, a):
        return self.g_i(torch.cat([c, a], dim=-1))

    def outer_decode(self, m, s):
        return self.g_o(torch.cat([m, s], dim=-1))

    def sensitive_prob(self, a):
        return torch.sigmoid(self.h(a)).squeeze(-1)

    def prior(self, n, dim, rng):
        return torch.randn(n, dim, generator=rng, dtype=DTYPE)


def _check_dim(t: torch.Tensor, dim: int, what: str):
    if t.shape[-1] != dim:
        raise DimensionMismatch(f"{what} has dimension {t.shape[-1]}, model expects {dim}")


def _need_inner(params: TransformModel):
    if not params.inner_level:
        raise DimensionMismatch("operation needs the inner level (E_c, E_a, G_i, h)")


def encode(params: TransformModel, x) -> LatentFactors:
    x = as_tensor(x)
    _check_dim(x, params.shape.input_dim, "x")
    m = params.e_m(x)
    s = params.e_s(x)
    if params.inner_level:
        return LatentFactors(m, params.e_c(m), params.e_a(m), s)
    empty = m.new_zeros(m.shape[:-1] + (0,))
    return LatentFactors(m, m, empty, s)


def decode(params: TransformModel, c, a, s) -> torch.Tensor:
    _need_inner(params)
    c, a, s = as_tensor(c), as_tensor(a), as_tensor(s)
    _check_dim(c, params.shape.dim_c, "c")
    _check_dim(a, params.shape.dim_a, "a")
    _check_dim(s, params.shape.dim_s, "s")
    return params.outer_decode(params.inner_decode(c, a), s)


def _l1(a, b):
    return (a - b).abs().sum(dim=-1).mean()


def loss_data_recon(params: TransformModel, batch: Batch) -> torch.Tensor:
    """Data -> factors -> data reconstruction, plus the inner m -> (c, a) -> m term."""
    x = batch.x
    f = encode(params, x)
    if not params.inner_level:
        return _l1(params.outer_decode(f.content_m, f.style_s), x)
    m_hat = params.inner_decode(f.semantic_c, f.sensitive_a)
    x_hat = params.outer_decode(m_hat, f.style_s)
    return _l1(x_hat, x) + _l1(m_hat, f.content_m)


def loss_factor_recon(params: TransformModel, batch: Batch, rng: torch.Generator) -> torch.Tensor:
    """Cycle consistency of the factors with a ~ N(0, I_a) and s ~ N(0, I_s).

    Five terms: c and a through G_i, s and m through G_o, and s through
    the full two-level decoder.
    """
    n = len(batch)
    f = encode(params, batch.x)
    m = f.content_m
    if params.inner_level:
        a_p = params.prior(n, params.shape.dim_a, rng)
    s_p = params.prior(n, params.shape.dim_s, rng)
    x_ms = params.outer_decode(m, s_p)
    loss = _l1(params.e_s(x_ms), s_p) + _l1(params.e_m(x_ms), m)
    if params.inner_level:
        c = f.semantic_c
        m_ca = params.inner_decode(c, a_p)
        loss = loss + _l1(params.e_c(m_ca), c) + _l1(params.e_a(m_ca), a_p)
        loss = loss + _l1(params.e_s(params.outer_decode(m_ca, s_p)), s_p)
    return loss


def binary_cross_entropy(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy(prob, target)


def loss_sensitive(params: TransformModel, batch: Batch, detach_factor: bool = False) -> torch.Tensor:
    """Cross-entropy of h(E_a(E_m(x))) against (z + 1) / 2."""
    _need_inner(params)
    a = encode(params, batch.x).sensitive_a
    if detach_factor:
        a = a.detach()
    return binary_cross_entropy(params.sensitive_prob(a), (batch.z + 1.0) / 2.0)


def _disc(d: nn.Module, v):
    return torch.sigmoid(d(v)).squeeze(-1).clamp(D_EPS, 1.0 - D_EPS)


def loss_adversarial(params: TransformModel, batch: Batch, rng: torch.Generator,
                     detach_fakes: bool = False):
    """Return ``(generator_loss, discriminator_loss)``.

    ``discriminator_loss`` is the objective ``log D(real) + log(1 - D(fake))``
    summed over both levels (<= 0); the discriminators maximise it.
    ``generator_loss`` is the sum of the ``log(1 - D(fake))`` terms (<= 0),
    which the generators minimise.
    """
    n = len(batch)
    f = encode(params, batch.x)
    s_p = params.prior(n, params.shape.dim_s, rng)
    if params.inner_level:
        a_p = params.prior(n, params.shape.dim_a, rng)
        m_fake = params.inner_decode(f.semantic_c, a_p)
    else:
        m_fake = f.content_m
    x_fake = params.outer_decode(m_fake, s_p)
    if detach_fakes:
        x_fake, m_fake = x_fake.detach(), m_fake.detach()
    real_terms = torch.log(_disc(params.d_o, batch.x)).mean()
    fake_terms = torch.log(1.0 - _disc(params.d_o, x_fake)).mean()
    if params.inner_level:
        m_real = f.content_m.detach() if detach_fakes else f.content_m
        real_terms = real_terms + torch.log(_disc(params.d_i, m_real)).mean()
        fake_terms = fake_terms + torch.log(1.0 - _disc(params.d_i, m_fake)).mean()
    return fake_terms, real_terms + fake_terms


def train_transform(datasets: Sequence[DomainDataset], config: TransformTrainConfig,
                    shape: TransformShape | None = None) -> TransformModel:
    """Alternate discriminator, auto-encoder and sensitive-classifier Adam steps.

    Per minibatch: discriminators ascend ``beta4 * discriminator_loss``;
    encoders/decoders descend ``beta1 * L_data + beta2 * L_factor`` (plus the
    optional sensitive and generator terms of the config); ``h`` descends
    ``beta3 * L_sens``.  The per-iteration losses are kept in
    ``model.trace``.
    """
    if not datasets:
        raise ValueError("need at least one source domain")
    pooled = concat(list(datasets))
    if shape is None:
        shape = TransformShape(input_dim=pooled.dim)
    elif shape.input_dim != pooled.dim:
        raise DimensionMismatch(f"shape expects {shape.input_dim} features, data has {pooled.dim}")
    model = TransformModel(shape, seed=config.seed)
    rng = generator(config.seed + 1)
    sampler = BatchSampler(pooled, config.batch_size, generator(config.seed + 2))
    adam = dict(betas=(0.9, 0.999), eps=1e-8)
    opt_d = torch.optim.Adam(model.discriminator_parameters(), lr=config.lr_discriminator, **adam)
    opt_ae = torch.optim.Adam(model.autoencoder_parameters(), lr=config.lr_autoencoder, **adam)
    opt_h = (torch.optim.Adam(model.sensitive_parameters(), lr=config.lr_sensitive, **adam)
             if model.inner_level else None)

    for it in range(config.iterations):
        batch = sampler.next()

        model.zero_grad(set_to_none=True)
        _, d_loss = loss_adversarial(model, batch, rng, detach_fakes=True)
        check_finite(d_loss, it, "discriminator loss")
        (-config.beta4 * d_loss).backward()
        opt_d.step()

        model.zero_grad(set_to_none=True)
        l_data = loss_data_recon(model, batch)
        l_factor = loss_factor_recon(model, batch, rng)
        ae = config.beta1 * l_data + config.beta2 * l_factor
        row = {"iter": it, "L_data": l_data.item(), "L_factor": l_factor.item(), "L_disc": d_loss.item()}
        if model.inner_level and config.encoder_sensitive:
            ae = ae + config.beta3 * loss_sensitive(model, batch)
        if config.generator_adversarial:
            g_loss, _ = loss_adversarial(model, batch, rng)
            ae = ae + config.beta4 * g_loss
        check_finite(ae, it, "auto-encoder loss")
        ae.backward()
        opt_ae.step()

        if opt_h is not None:
            model.zero_grad(set_to_none=True)
            l_sens = loss_sensitive(model, batch, detach_factor=True)
            check_finite(l_sens, it, "sensitive loss")
            (config.beta3 * l_sens).backward()
            opt_h.step()
            row["L_sens"] = l_sens.item()
        model.trace.append(row)
    model.zero_grad(set_to_none=True)
    model.train_config = config
    return model


@torch.no_grad()
def augment(params: TransformModel, x, z, y, rng: torch.Generator):
    """Move examples to a random synthetic domain.

    Keeps the semantic factor, draws a' ~ N(0, I_a) and s' ~ N(0, I_s),
    decodes ``x' = G_o(G_i(c, a'), s')`` and labels ``z' = +1`` iff
    ``h(a') >= 0.5``.  The class label is passed through unchanged.
    Works on a single example or a batch.
    """
    _need_inner(params)
    x = as_tensor(x)
    single = x.dim() == 1
    xb = x.unsqueeze(0) if single else x
    n = xb.shape[0]
    c = encode(params, xb).semantic_c
    a_p = params.prior(n, params.shape.dim_a, rng)
    s_p = params.prior(n, params.shape.dim_s, rng)
    x_new = params.outer_decode(params.inner_decode(c, a_p), s_p)
    z_new = torch.where(params.sensitive_prob(a_p) >= 0.5, 1.0, -1.0).to(DTYPE)
    if single:
        return x_new[0], int(z_new[0]), y
    return x_new, z_new, y


@torch.no_grad()
def augment_outer(params: TransformModel, x, z, y, rng: torch.Generator):
    """Style-only augmentation ``x' = G_o(E_m(x), s')``; z and y unchanged."""
    x = as_tensor(x)
    m = params.e_m(x)
    s_p = params.prior(m.shape[0], params.shape.dim_s, rng)
    return params.outer_decode(m, s_p), z, y


@torch.no_grad()
def sensitive_accuracy(params: TransformModel, dataset: DomainDataset) -> float:
    batch = Batch.from_dataset(dataset)
    prob = params.sensitive_prob(encode(params, batch.x).sensitive_a)
    pred = torch.where(prob >= 0.5, 1.0, -1.0)
    return float((pred == batch.z).to(DTYPE).mean())


def save_transform(params: TransformModel, path):
    cfg = getattr(params, "train_config", None)
    save_checkpoint(params, path, "transform", {
        "shape": asdict(params.shape),
        "train_config": asdict(cfg) if cfg is not None else None,
    })


def load_transform(path) -> TransformModel:
    meta, state = read_checkpoint(path, "transform")
    model = TransformModel(TransformShape.from_dict(meta["shape"]))
    load_state_strict(model, state, path)
    if meta.get("train_config"):
        model.train_config = TransformTrainConfig(**meta["train_config"])
    return model
