"""Message-passing encoder mapping a molecule to per-atom Gaussian posteriors.

Node states start from learned atom-type embeddings and are updated for a
fixed number of rounds: per-bond-type linear transforms of neighbor states
are summed into a message, combined with the node state through a GRU cell,
and a residual connection adds each round's input state to its output. Two
linear heads read off the posterior mean and log-variance per atom.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    concat,
    exp_,
    gru_cell,
    linear,
    matmul,
    mul,
    scale,
    sum_row_groups,
    take_rows,
    uniform_init,
)
from .chemgraph import BOND_ORDERS, MolecularGraph
from .config import ModelConfig


@dataclass(frozen=True)
class LatentEncoding:
    mu: Tensor  # (atoms, latent_dim)
    log_sigma_sq: Tensor  # (atoms, latent_dim)

    @property
    def num_atoms(self) -> int:
        return self.mu.shape[0]


def init_encoder_params(vocab_size: int, cfg: ModelConfig, rng: np.random.Generator) -> dict:
    hd = cfg.hidden_dim
    params = {
        "enc.embed": Parameter(rng.standard_normal((vocab_size, hd)).astype(np.float32) * 0.1),
        "enc.gru.wx": uniform_init(rng, (hd, 3 * hd), hd),
        "enc.gru.wh": uniform_init(rng, (hd, 3 * hd), hd),
        "enc.gru.bx": Parameter(np.zeros(3 * hd, dtype=np.float32)),
        "enc.gru.bh": Parameter(np.zeros(3 * hd, dtype=np.float32)),
        "enc.mu.w": uniform_init(rng, (hd, cfg.latent_dim), hd),
        "enc.mu.b": Parameter(np.zeros(cfg.latent_dim, dtype=np.float32)),
        "enc.logvar.w": uniform_init(rng, (hd, cfg.latent_dim), hd),
        "enc.logvar.b": Parameter(np.zeros(cfg.latent_dim, dtype=np.float32)),
    }
    for order in BOND_ORDERS:
        # bond-type transforms are bias-free and dimension-preserving
        params[f"enc.msg.{order}"] = uniform_init(rng, (hd, hd), hd)
    return params


class MessageStructure:
    """Neighbor-gather plan for one graph: which transformed rows feed which
    node, prepared once and reused across rounds."""

    __slots__ = ("orders", "groups", "num_atoms")

    def __init__(self, graph: MolecularGraph):
        self.num_atoms = graph.num_atoms
        present = sorted({order for _, _, order in graph.bonds()})
        self.orders = present
        slot = {order: i for i, order in enumerate(present)}
        groups: list[list[int]] = [[] for _ in range(graph.num_atoms)]
        for u, v, order in graph.bonds():
            base = slot[order] * graph.num_atoms
            groups[u].append(base + v)
            groups[v].append(base + u)
        self.groups = groups


def message_round(
    h: Tensor,
    structure: MessageStructure,
    params: dict,
    prefix: str,
    residual: bool,
) -> Tensor:
    if structure.orders:
        transformed = concat(
            [matmul(h, params[f"{prefix}.msg.{order}"]) for order in structure.orders],
            axis=0,
        )
        messages = sum_row_groups(transformed, structure.groups)
    else:
        messages = Tensor(np.zeros(h.shape, dtype=np.float32))
    updated = gru_cell(
        messages,
        h,
        params[f"{prefix}.gru.wx"],
        params[f"{prefix}.gru.wh"],
        params[f"{prefix}.gru.bx"],
        params[f"{prefix}.gru.bh"],
    )
    return add(updated, h) if residual else updated


def encode(graph: MolecularGraph, params: dict, cfg: ModelConfig) -> LatentEncoding:
    """Run the message-passing rounds and read off per-atom posteriors."""
    if graph.num_atoms == 0:
        raise ValueError("cannot encode an empty graph")
    types = [graph.type_index(v) for v in range(graph.num_atoms)]
    if max(types) >= params["enc.embed"].shape[0]:
        raise ValueError("graph contains atom types outside the trained vocabulary")
    h = take_rows(params["enc.embed"], types)
    structure = MessageStructure(graph)
    for _ in range(cfg.mp_steps):
        h = message_round(h, structure, params, "enc", residual=True)
    mu = linear(h, params["enc.mu.w"], params["enc.mu.b"])
    log_sigma_sq = linear(h, params["enc.logvar.w"], params["enc.logvar.b"])
    return LatentEncoding(mu, log_sigma_sq)


def reparameterize(encoding: LatentEncoding, rng: np.random.Generator) -> Tensor:
    """z = mu + exp(log_sigma_sq / 2) * eps with eps ~ N(0, I)."""
    eps = Tensor(rng.standard_normal(encoding.mu.shape).astype(np.float32))
    sigma = exp_(scale(encoding.log_sigma_sq, 0.5))
    return add(encoding.mu, mul(sigma, eps))


def sample_prior(num_atoms: int, latent_dim: int, rng: np.random.Generator) -> Tensor:
    if num_atoms < 1:
        raise ValueError("need at least one atom")
    return Tensor(rng.standard_normal((num_atoms, latent_dim)).astype(np.float32))
