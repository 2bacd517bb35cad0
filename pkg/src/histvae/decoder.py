"""Two-phase molecule decoder.

Phase one assigns an atom type to every latent point, conditioned on a
target valence histogram: a type is only admissible while its valence still
has a free slot in the remaining (target minus used) histogram, and in
generation the target itself is re-sampled after every assignment so it
keeps dominating the types chosen so far.

Phase two grows bonds from a focus atom under binary masks that forbid any
decision violating valences or duplicating a bond. A dedicated stop
candidate ends the focus atom's session; newly connected atoms queue up
in FIFO order, so construction is breadth-first. Every accepted bond
triggers a full message-passing refresh of the node states from their
initial values over the current partial graph.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    linear,
    masked_softmax,
    relu,
    reshape,
    scale,
    sum_row_groups,
    take_rows,
    tanh_,
    tile_rows,
    uniform_init,
)
from .chemgraph import BOND_ORDERS, AtomVocabulary, MolecularGraph
from .config import ModelConfig
from .encoder import MessageStructure, message_round, sample_prior
from .histograms import HistogramDistribution, ValenceHistogram

TRAINING = "training"
RECONSTRUCTION = "reconstruction"
GENERATION = "generation"

# graph-distance feature: buckets for hops 1..9, then >=10, then unreachable
NUM_DISTANCE_BUCKETS = 11
_UNREACHABLE_BUCKET = 10

# a teacher decision is (target_atom, bond_order); None means stop
Decision = Optional[tuple[int, int]]

_DONE = object()


def phi_dim(cfg: ModelConfig) -> int:
    return 4 * cfg.node_dim + NUM_DISTANCE_BUCKETS


def init_decoder_params(
    vocab_size: int, nu: int, cfg: ModelConfig, rng: np.random.Generator
) -> dict:
    d = cfg.node_dim
    ctx_in = cfg.latent_dim + 2 * nu
    feats = cfg.latent_dim + cfg.hidden_dim
    pd = phi_dim(cfg)
    params = {
        "dec.embed": Parameter(rng.standard_normal((vocab_size, cfg.hidden_dim)).astype(np.float32) * 0.1),
        "dec.ctx.w": uniform_init(rng, (ctx_in, cfg.hidden_dim), ctx_in),
        "dec.ctx.b": Parameter(np.zeros(cfg.hidden_dim, dtype=np.float32)),
        "dec.type.w": uniform_init(rng, (feats, vocab_size), feats),
        "dec.type.b": Parameter(np.zeros(vocab_size, dtype=np.float32)),
        "dec.gru.wx": uniform_init(rng, (d, 3 * d), d),
        "dec.gru.wh": uniform_init(rng, (d, 3 * d), d),
        "dec.gru.bx": Parameter(np.zeros(3 * d, dtype=np.float32)),
        "dec.gru.bh": Parameter(np.zeros(3 * d, dtype=np.float32)),
        "dec.stop": Parameter(rng.standard_normal(d).astype(np.float32) * 0.1),
        "dec.exist.w1": uniform_init(rng, (pd, cfg.mlp_hidden), pd),
        "dec.exist.b1": Parameter(np.zeros(cfg.mlp_hidden, dtype=np.float32)),
        "dec.exist.w2": uniform_init(rng, (cfg.mlp_hidden, 1), cfg.mlp_hidden),
        "dec.exist.b2": Parameter(np.zeros(1, dtype=np.float32)),
        "dec.bond.w1": uniform_init(rng, (pd, cfg.mlp_hidden), pd),
        "dec.bond.b1": Parameter(np.zeros(cfg.mlp_hidden, dtype=np.float32)),
        "dec.bond.w2": uniform_init(rng, (cfg.mlp_hidden, len(BOND_ORDERS)), cfg.mlp_hidden),
        "dec.bond.b2": Parameter(np.zeros(len(BOND_ORDERS), dtype=np.float32)),
    }
    for order in BOND_ORDERS:
        params[f"dec.msg.{order}"] = uniform_init(rng, (d, d), d)
    return params


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs.astype(np.float64))
    r = rng.random() * cum[-1]
    idx = min(int(np.searchsorted(cum, r, side="right")), len(probs) - 1)
    if probs[idx] == 0.0:
        nonzero = np.nonzero(probs)[0]
        before = nonzero[nonzero <= idx]
        idx = int(before.max() if before.size else nonzero.min())
    return idx


# -- phase one: conditional atom typing ---------------------------------------


@dataclass
class TypingState:
    """Per-step record of the histogram-conditioned typing procedure."""

    types: list[int] = field(default_factory=list)
    used_history: list[ValenceHistogram] = field(default_factory=list)
    target_history: list[ValenceHistogram] = field(default_factory=list)
    fallback_history: list[int] = field(default_factory=list)
    fallback_count: int = 0

    @property
    def steps(self) -> int:
        return len(self.types)


def type_mask(
    remaining: ValenceHistogram, vocab: AtomVocabulary, fallback_active: bool
) -> np.ndarray:
    """Admit a type iff its valence still has a free slot in `remaining`.

    Once a sampling fallback has fired the target may no longer dominate the
    used histogram; if that empties the mask entirely, conditioning is lost
    anyway and every type is admitted so generation can proceed.
    """
    mask = np.array(
        [1.0 if remaining.count(t.valence) > 0 else 0.0 for t in vocab],
        dtype=np.float32,
    )
    if mask.sum() == 0:
        if not fallback_active:
            raise AssertionError("typing mask empty while conditioning is intact")
        mask = np.ones(len(vocab), dtype=np.float32)
    return mask


def assign_atom_types(
    z: Tensor,
    initial_target: ValenceHistogram,
    distribution: Optional[HistogramDistribution],
    vocab: AtomVocabulary,
    params: dict,
    cfg: ModelConfig,
    mode: str,
    rng: np.random.Generator,
    teacher_types: Optional[Sequence[int]] = None,
) -> tuple[list[int], TypingState, list[Tensor]]:
    """Assign one atom type per latent row under histogram conditioning.

    In training mode the teacher types are consumed and the masked type
    distributions are returned as cross-entropy terms; in reconstruction and
    generation the types are sampled. Only generation re-samples the target
    histogram (from `distribution`) after each step.
    """
    num_atoms = z.shape[0]
    if mode in (TRAINING, RECONSTRUCTION) and initial_target.total != num_atoms:
        raise ValueError(
            f"target histogram holds {initial_target.total} atoms, latent rows {num_atoms}"
        )
    if mode == TRAINING and (teacher_types is None or len(teacher_types) != num_atoms):
        raise ValueError("training mode needs one teacher type per latent row")
    if mode == GENERATION and distribution is None:
        raise ValueError("generation mode needs a histogram distribution")
    if initial_target.nu != vocab.nu:
        raise ValueError(
            f"histogram covers valences 1..{initial_target.nu} but the vocabulary "
            f"has maximum valence {vocab.nu}"
        )

    state = TypingState()
    used = ValenceHistogram.zeros(initial_target.nu)
    target = initial_target
    losses: list[Tensor] = []
    norm = float(num_atoms)

    for t in range(num_atoms):
        remaining = target.clamped_difference(used)
        mask = type_mask(remaining, vocab, state.fallback_count > 0)
        z_row = take_rows(z, [t])
        hist_feats = Tensor(
            np.concatenate([remaining.as_array(), used.as_array()])[None, :] / norm
        )
        context = tanh_(linear(concat([z_row, hist_feats], axis=1),
                               params["dec.ctx.w"], params["dec.ctx.b"]))
        type_feats = concat([z_row, context], axis=1)
        logits = reshape(linear(type_feats, params["dec.type.w"], params["dec.type.b"]),
                         (len(vocab),))
        probs = masked_softmax(logits, mask)

        if mode == TRAINING:
            chosen = int(teacher_types[t])
            if mask[chosen] == 0:
                raise ValueError(
                    f"teacher type {vocab[chosen].symbol} is masked at step {t}: "
                    "molecule histogram and vocabulary disagree"
                )
            losses.append(cross_entropy(probs, chosen))
        else:
            chosen = _sample_index(probs.data, rng)

        state.types.append(chosen)
        used = used.with_valence(vocab[chosen].valence)
        if mode == GENERATION:
            target, fell_back = distribution.sample_compatible(used, num_atoms, rng)
            if fell_back:
                state.fallback_count += 1
        state.used_history.append(used)
        state.target_history.append(target)
        state.fallback_history.append(state.fallback_count)

    return state.types, state, losses


# -- phase two: bond generation ------------------------------------------------


@dataclass
class DecoderState:
    graph: MolecularGraph  # partial graph over the typed atoms, no hydrogens yet
    node_states: Tensor  # (m, node_dim), refreshed after every bond
    initial_states: Tensor  # (m, node_dim), fixed at initialization
    init_summary: Tensor  # (1, node_dim): mean of the initial states
    connected_summary: Tensor  # (1, node_dim): mean over connected nodes
    focus: int
    initial_focus: int
    fifo: deque
    visited: set
    step: int = 0


def initialize_decoder_state(
    z: Tensor,
    types: Sequence[int],
    vocab: AtomVocabulary,
    params: dict,
    cfg: ModelConfig,
    rng: np.random.Generator,
    focus: Optional[int] = None,
) -> DecoderState:
    if len(types) != z.shape[0]:
        raise ValueError("one type per latent row required")
    embeds = take_rows(params["dec.embed"], list(types))
    h0 = concat([z, embeds], axis=1)
    init_summary = scale(sum_row_groups(h0, [list(range(z.shape[0]))]), 1.0 / z.shape[0])
    connected_summary = Tensor(np.zeros((1, cfg.node_dim), dtype=np.float32))
    graph = MolecularGraph(vocab, list(types))
    if focus is None:
        focus = int(rng.integers(graph.num_atoms))
    return DecoderState(
        graph=graph,
        node_states=h0,
        initial_states=h0,
        init_summary=init_summary,
        connected_summary=connected_summary,
        focus=focus,
        initial_focus=focus,
        fifo=deque(),
        visited={focus},
    )


def edge_mask(graph: MolecularGraph, focus: int) -> np.ndarray:
    """Candidate mask over atoms plus the trailing stop slot.

    Atom u is admissible iff it is not the focus, shares no existing bond
    with it, and both endpoints have free valence. The stop slot is always
    admissible.
    """
    mask = np.zeros(graph.num_atoms + 1, dtype=np.float32)
    mask[graph.num_atoms] = 1.0
    if graph.remaining_valence(focus) < 1:
        return mask
    for u in range(graph.num_atoms):
        if u == focus or graph.bond_order(focus, u) > 0:
            continue
        if graph.remaining_valence(u) >= 1:
            mask[u] = 1.0
    return mask


def bond_order_mask(graph: MolecularGraph, focus: int, target: int) -> np.ndarray:
    """Order k is admissible iff both endpoints keep at least k free valence."""
    cap = min(graph.remaining_valence(focus), graph.remaining_valence(target))
    return np.array([1.0 if k <= cap else 0.0 for k in BOND_ORDERS], dtype=np.float32)


def _distance_features(graph: MolecularGraph, focus: int) -> np.ndarray:
    feats = np.zeros((graph.num_atoms + 1, NUM_DISTANCE_BUCKETS), dtype=np.float32)
    dist = graph.shortest_path_lengths(focus)
    for u in range(graph.num_atoms):
        d = dist[u]
        if d is None or d == 0:
            feats[u, _UNREACHABLE_BUCKET] = 1.0
        elif d <= 9:
            feats[u, d - 1] = 1.0
        else:
            feats[u, 9] = 1.0
    feats[graph.num_atoms, _UNREACHABLE_BUCKET] = 1.0
    return feats


def _candidate_features(state: DecoderState, params: dict, cfg: ModelConfig) -> Tensor:
    """Per-candidate feature rows [h_focus, h_candidate, distance, summaries].

    The last row belongs to the stop slot, represented by a learned state.
    """
    n = state.graph.num_atoms
    h = state.node_states
    focus_row = take_rows(h, [state.focus])
    partners = concat([h, reshape(params["dec.stop"], (1, cfg.node_dim))], axis=0)
    distances = Tensor(_distance_features(state.graph, state.focus))
    return concat(
        [
            tile_rows(focus_row, n + 1),
            partners,
            distances,
            tile_rows(state.init_summary, n + 1),
            tile_rows(state.connected_summary, n + 1),
        ],
        axis=1,
    )


def _mlp(x: Tensor, params: dict, stem: str) -> Tensor:
    hidden = relu(linear(x, params[f"{stem}.w1"], params[f"{stem}.b1"]))
    return linear(hidden, params[f"{stem}.w2"], params[f"{stem}.b2"])


def score_edges(
    state: DecoderState, params: dict, cfg: ModelConfig
) -> tuple[Tensor, Tensor, np.ndarray]:
    """Existence probabilities over candidates+stop, plus the feature rows."""
    feats = _candidate_features(state, params, cfg)
    mask = edge_mask(state.graph, state.focus)
    logits = reshape(_mlp(feats, params, "dec.exist"), (state.graph.num_atoms + 1,))
    return masked_softmax(logits, mask), feats, mask


def score_bond_orders(
    feats: Tensor, target: int, state: DecoderState, params: dict
) -> Tensor:
    row = take_rows(feats, [target])
    logits = reshape(_mlp(row, params, "dec.bond"), (len(BOND_ORDERS),))
    return masked_softmax(logits, bond_order_mask(state.graph, state.focus, target))


def _refresh(state: DecoderState, params: dict, cfg: ModelConfig) -> None:
    structure = MessageStructure(state.graph)
    h = state.initial_states
    for _ in range(cfg.mp_steps):
        h = message_round(h, structure, params, "dec", residual=False)
    state.node_states = h
    connected = [i for i in range(state.graph.num_atoms) if state.graph.degree(i) > 0]
    state.connected_summary = scale(
        sum_row_groups(h, [connected]), 1.0 / max(len(connected), 1)
    )


def decode_bonds(
    state: DecoderState,
    params: dict,
    cfg: ModelConfig,
    mode: str,
    rng: np.random.Generator,
    teacher: Optional[Sequence[Decision]] = None,
    trace: Optional[list[str]] = None,
) -> tuple[MolecularGraph, list[Tensor]]:
    """Grow bonds breadth-first until the FIFO drains, then post-process.

    In training mode the teacher decisions are forced and their step
    probabilities are accumulated as cross-entropy terms. Isolated atoms are
    removed at the end (keeping the initial focus when nothing bonded at
    all), and hydrogens complete every remaining valence.
    """
    if mode == TRAINING and teacher is None:
        raise ValueError("training mode needs a teacher decision sequence")
    losses: list[Tensor] = []
    teacher_iter = iter(teacher) if teacher is not None else None
    n = state.graph.num_atoms
    stop_slot = n
    budget = n * (state.graph.vocab.nu + 1) + n + 1  # decision upper bound

    while True:
        state.step += 1
        if state.step > budget:
            raise AssertionError("bond generation exceeded its decision budget")
        probs, feats, mask = score_edges(state, params, cfg)

        if mode == TRAINING:
            decision = next(teacher_iter, None)
            choice = stop_slot if decision is None else decision[0]
            if mask[choice] == 0:
                raise ValueError(f"teacher decision {decision} is masked at step {state.step}")
            losses.append(cross_entropy(probs, choice))
        else:
            choice = _sample_index(probs.data, rng)

        if choice == stop_slot:
            if trace is not None:
                trace.append(f"t={state.step} focus={state.focus} -> STOP")
            if not state.fifo:
                break
            state.focus = state.fifo.popleft()
            state.visited.add(state.focus)
            continue

        order_probs = score_bond_orders(feats, choice, state, params)
        if mode == TRAINING:
            order = decision[1]
            if order_probs.data[order - 1] == 0.0:
                raise ValueError(f"teacher bond order {order} is masked at step {state.step}")
            losses.append(cross_entropy(order_probs, order - 1))
        else:
            order = BOND_ORDERS[_sample_index(order_probs.data, rng)]

        newly_connected = state.graph.degree(choice) == 0
        state.graph = state.graph.with_bond(state.focus, choice, order)
        if trace is not None:
            trace.append(f"t={state.step} focus={state.focus} -> (u={choice}, l={order})")
        if newly_connected and choice not in state.visited:
            state.fifo.append(choice)
        _refresh(state, params, cfg)

    if teacher_iter is not None and next(teacher_iter, _DONE) is not _DONE:
        raise ValueError("teacher decisions left over after decoding finished")

    if state.graph.num_bonds == 0:
        final = state.graph.subgraph([state.initial_focus])
    else:
        final = state.graph.remove_isolated_atoms()
    return final.complete_with_hydrogens(), losses


# -- orchestration ---------------------------------------------------------------


@dataclass
class GenerationResult:
    graph: MolecularGraph
    typing: TypingState
    trace: Optional[list[str]] = None

    @property
    def fallback_count(self) -> int:
        return self.typing.fallback_count


def generate_molecule(
    params: dict,
    vocab: AtomVocabulary,
    distribution: HistogramDistribution,
    cfg: ModelConfig,
    rng: np.random.Generator,
    collect_trace: bool = False,
) -> GenerationResult:
    """Sample a target histogram, latent points, types, and bonds."""
    target, num_atoms = distribution.sample_initial(rng)
    z = sample_prior(num_atoms, cfg.latent_dim, rng)
    trace: Optional[list[str]] = [] if collect_trace else None
    types, typing_state, _ = assign_atom_types(
        z, target, distribution, vocab, params, cfg, GENERATION, rng
    )
    if trace is not None:
        for t, (used, tgt) in enumerate(
            zip(typing_state.used_history, typing_state.target_history), start=1
        ):
            trace.append(
                f"typing t={t} type={vocab[types[t - 1]].symbol} "
                f"used={used.as_dict()} target={tgt.as_dict()}"
            )
    state = initialize_decoder_state(z, types, vocab, params, cfg, rng)
    graph, _ = decode_bonds(state, params, cfg, GENERATION, rng, trace=trace)
    return GenerationResult(graph=graph, typing=typing_state, trace=trace)


def decode_from_latent(
    z: Tensor,
    target: ValenceHistogram,
    params: dict,
    vocab: AtomVocabulary,
    cfg: ModelConfig,
    rng: np.random.Generator,
) -> MolecularGraph:
    """Type the given latent points against `target` and decode bonds once."""
    types, _, _ = assign_atom_types(
        z, target, None, vocab, params, cfg, RECONSTRUCTION, rng
    )
    state = initialize_decoder_state(z, types, vocab, params, cfg, rng)
    out, _ = decode_bonds(state, params, cfg, RECONSTRUCTION, rng)
    return out


def reconstruct_molecule(
    graph: MolecularGraph,
    params: dict,
    vocab: AtomVocabulary,
    cfg: ModelConfig,
    rng: np.random.Generator,
    encoding=None,
) -> MolecularGraph:
    """Encode (or reuse an encoding), sample latents, and decode once with the
    molecule's own histogram as the typing target."""
    from .encoder import encode, reparameterize

    if encoding is None:
        encoding = encode(graph, params, cfg)
    z = reparameterize(encoding, rng)
    target = graph.valence_histogram(include_hydrogens=False)
    return decode_from_latent(z, target, params, vocab, cfg, rng)
