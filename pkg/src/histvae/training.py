"""Loss assembly, teacher trajectories, the training loop, and latent-space
property optimization.

Bond supervision marginalizes over construction orders; that sum is
estimated by Monte Carlo: each epoch draws one fresh random breadth-first
trajectory per molecule (random start atom, random tie-breaking) and the
decoder is teacher-forced along it.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import (
    Adam,
    Parameter,
    Tape,
    Tensor,
    add,
    add_n,
    gaussian_kl,
    linear,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sub,
    take_rows,
    uniform_init,
)
from .chemgraph import MolecularGraph
from .config import ModelConfig, RunConfig
from .decoder import (
    TRAINING,
    Decision,
    assign_atom_types,
    decode_bonds,
    initialize_decoder_state,
)
from .encoder import encode, reparameterize
from .histograms import ValenceHistogram


@dataclass
class TeacherTrajectory:
    """One breadth-first construction order of a molecule.

    Atoms are relabeled by visit order (atom_order[i] is the original index
    of decoder node i); decisions are expressed in decoder indices and each
    focus session ends with a stop (None).
    """

    atom_order: tuple[int, ...]
    types: tuple[int, ...]
    decisions: tuple[Decision, ...]
    initial_hist: ValenceHistogram
    source: MolecularGraph

    @property
    def relabeled_source(self) -> MolecularGraph:
        return self.source.permuted(list(self.atom_order))


def build_trajectory(graph: MolecularGraph, rng: np.random.Generator) -> TeacherTrajectory:
    """Sample a random BFS construction that reproduces `graph` exactly."""
    if not graph.is_connected():
        raise ValueError("trajectories need a connected molecule")
    n = graph.num_atoms
    start = int(rng.integers(n))
    order = [start]
    position = {start: 0}
    fifo = deque([start])
    added: set[tuple[int, int]] = set()
    decisions: list[Decision] = []
    while fifo:
        focus = fifo.popleft()
        pending = [
            (u, bond_order)
            for u, bond_order in graph.neighbors(focus)
            if (min(focus, u), max(focus, u)) not in added
        ]
        rng.shuffle(pending)
        for u, bond_order in pending:
            added.add((min(focus, u), max(focus, u)))
            if u not in position:
                position[u] = len(order)
                order.append(u)
                fifo.append(u)
            decisions.append((position[u], bond_order))
        decisions.append(None)
    assert len(order) == n, "BFS must visit every atom of a connected molecule"
    types = tuple(graph.type_index(a) for a in order)
    return TeacherTrajectory(
        atom_order=tuple(order),
        types=types,
        decisions=tuple(decisions),
        initial_hist=graph.valence_histogram(include_hydrogens=False),
        source=graph,
    )


# -- property-regression head ----------------------------------------------------


def init_property_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    return {
        "prop.w1": uniform_init(rng, (cfg.latent_dim, cfg.mlp_hidden), cfg.latent_dim),
        "prop.b1": Parameter(np.zeros(cfg.mlp_hidden, dtype=np.float32)),
        "prop.w2": uniform_init(rng, (cfg.mlp_hidden, 1), cfg.mlp_hidden),
        "prop.b2": Parameter(np.zeros(1, dtype=np.float32)),
    }


def predict_property(z: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    """Scalar property prediction from the mean of the latent rows."""
    pooled = reshape(mean(z, axis=0), (1, cfg.latent_dim))
    hidden = relu(linear(pooled, params["prop.w1"], params["prop.b1"]))
    return reshape(linear(hidden, params["prop.w2"], params["prop.b2"]), ())


# -- loss --------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    recon: float
    latent: float
    opt: float
    lambda_latent: float
    lambda_opt: float

    @property
    def total(self) -> float:
        return self.recon + self.lambda_latent * self.latent + self.lambda_opt * self.opt


def compute_loss(
    graph: MolecularGraph,
    prop_value: Optional[float],
    params: dict,
    vocab,
    cfg: ModelConfig,
    run: RunConfig,
    rng: np.random.Generator,
    trajectory: Optional[TeacherTrajectory] = None,
) -> tuple[Tensor, LossBreakdown]:
    """Teacher-forced reconstruction + KL + property loss for one molecule."""
    if trajectory is None:
        trajectory = build_trajectory(graph, rng)
    encoding = encode(graph, params, cfg)
    z_all = reparameterize(encoding, rng)
    z = take_rows(z_all, list(trajectory.atom_order))

    _, _, type_losses = assign_atom_types(
        z, trajectory.initial_hist, None, vocab, params, cfg, TRAINING, rng,
        teacher_types=trajectory.types,
    )
    state = initialize_decoder_state(z, trajectory.types, vocab, params, cfg, rng, focus=0)
    _, bond_losses = decode_bonds(
        state, params, cfg, TRAINING, rng, teacher=trajectory.decisions
    )
    recon = add_n(type_losses + bond_losses)
    latent = gaussian_kl(encoding.mu, encoding.log_sigma_sq)
    total = add(recon, scale(latent, run.lambda_latent))

    opt_value = 0.0
    if run.lambda_opt > 0:
        if prop_value is None:
            raise ValueError("lambda_opt > 0 but the molecule has no property value")
        diff = sub(predict_property(z_all, params, cfg), Tensor(np.float32(prop_value)))
        opt = mul(diff, diff)
        total = add(total, scale(opt, run.lambda_opt))
        opt_value = opt.item()

    breakdown = LossBreakdown(
        recon=recon.item(),
        latent=latent.item(),
        opt=opt_value,
        lambda_latent=run.lambda_latent,
        lambda_opt=run.lambda_opt,
    )
    return total, breakdown


def proxy_property_values(graphs: Sequence[MolecularGraph]) -> list[float]:
    """Built-in property target: heavy-atom count scaled to [0, 1]."""
    top = max(g.num_atoms for g in graphs)
    return [g.num_atoms / top for g in graphs]


def train_loop(
    graphs: Sequence[MolecularGraph],
    properties: Sequence[Optional[float]],
    params: dict,
    vocab,
    run: RunConfig,
    rng: np.random.Generator,
    checkpoint_fn: Optional[Callable[[int], None]] = None,
    log_fn: Callable[[str], None] = print,
) -> list[LossBreakdown]:
    """Shuffled minibatch epochs with fresh trajectories every epoch.

    Returns the per-epoch mean loss breakdowns; `checkpoint_fn(epoch)` runs
    after every epoch (and once for epoch 0 so an untrained checkpoint always
    exists).
    """
    if not graphs:
        raise ValueError("empty training set")
    cfg = run.model_config()
    if run.lambda_opt > 0 and any(p is None for p in properties):
        log_fn("# property column missing: using heavy-atom-count proxy target")
        properties = proxy_property_values(graphs)
    optimizer = Adam(params, lr=run.lr, beta1=run.beta1, beta2=run.beta2, eps=run.adam_eps)
    history: list[LossBreakdown] = []
    if checkpoint_fn is not None:
        checkpoint_fn(0)
    for epoch in range(1, run.epochs + 1):
        perm = rng.permutation(len(graphs))
        sums = np.zeros(3, dtype=np.float64)
        count = 0
        for lo in range(0, len(perm), run.batch_size):
            batch = perm[lo : lo + run.batch_size]
            optimizer.zero_grad()
            with Tape() as tape:
                losses = []
                for i in batch:
                    total, breakdown = compute_loss(
                        graphs[i], properties[i], params, vocab, cfg, run, rng
                    )
                    losses.append(total)
                    sums += (breakdown.recon, breakdown.latent, breakdown.opt)
                    count += 1
                batch_loss = scale(add_n(losses), 1.0 / len(batch))
            tape.backward(batch_loss)
            optimizer.step()
        recon, latent, opt = sums / max(count, 1)
        epoch_loss = LossBreakdown(recon, latent, opt, run.lambda_latent, run.lambda_opt)
        history.append(epoch_loss)
        log_fn(
            f"epoch={epoch} recon={epoch_loss.recon:.6f} latent={epoch_loss.latent:.6f} "
            f"opt={epoch_loss.opt:.6f} total={epoch_loss.total:.6f}"
        )
        if checkpoint_fn is not None:
            checkpoint_fn(epoch)
    return history


# -- latent-space property optimization ----------------------------------------


def optimize_latent(
    z: Tensor,
    params: dict,
    cfg: ModelConfig,
    direction: str = "ascend",
    steps: int = 50,
    step_size: float = 0.05,
    tolerance: float = 1e-6,
) -> tuple[Tensor, list[float]]:
    """Gradient steps on the latent points toward a better predicted property.

    Steps that would worsen the prediction beyond `tolerance` are rejected
    with a halved step size, so the trajectory is monotone up to tolerance.
    Returns the final points and the accepted prediction history.
    """
    if direction not in ("ascend", "descend"):
        raise ValueError("direction must be 'ascend' or 'descend'")
    sign = 1.0 if direction == "ascend" else -1.0
    current = z.data.copy()

    def prediction(values: np.ndarray) -> float:
        return predict_property(Tensor(values), params, cfg).item()

    def gradient(values: np.ndarray) -> np.ndarray:
        leaf = Tensor(values, track=True)
        with Tape() as tape:
            out = predict_property(leaf, params, cfg)
        tape.backward(out)
        return leaf.grad

    history = [prediction(current)]
    step = step_size
    for _ in range(steps):
        grad = gradient(current)
        accepted = False
        for _ in range(30):
            candidate = current + sign * step * grad
            value = prediction(candidate)
            if sign * (value - history[-1]) >= -tolerance:
                current = candidate
                history.append(value)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return Tensor(current), history
