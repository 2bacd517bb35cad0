"""Evaluation protocols: reconstruction rate, validity, novelty, uniqueness,
and diversity of generated molecules."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .chemgraph import MolecularGraph, canonical_form

FINGERPRINT_BITS = 2048
_FP_RADIUS = 2


def _stable_hash(text: str) -> int:
    # process-independent (python's hash() is salted)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


def fingerprint(graph: MolecularGraph, n_bits: int = FINGERPRINT_BITS) -> np.ndarray:
    """Bit vector of hashed rooted substructures up to radius 2.

    Atom labels refine through neighbor multisets, so the result is invariant
    under relabeling of the graph.
    """
    bits = np.zeros(n_bits, dtype=bool)
    labels = [
        _stable_hash(f"{graph.atom_type(v).symbol}:{graph.implicit_h(v)}")
        for v in range(graph.num_atoms)
    ]
    for radius in range(_FP_RADIUS + 1):
        for v in range(graph.num_atoms):
            bits[_stable_hash(f"{radius}|{labels[v]}") % n_bits] = True
        if radius == _FP_RADIUS:
            break
        labels = [
            _stable_hash(
                str(labels[v])
                + "|"
                + ",".join(
                    str(p)
                    for p in sorted((order, labels[u]) for u, order in graph.neighbors(v))
                )
            )
            for v in range(graph.num_atoms)
        ]
    return bits


def tanimoto(a: np.ndarray, b: np.ndarray) -> float:
    """Bit-set intersection over union; defined as 1.0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError(f"fingerprint width mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def is_valid_molecule(graph: MolecularGraph) -> bool:
    """Non-empty, valence-valid and connected after post-processing."""
    return graph.num_atoms > 0 and graph.is_valence_valid() and graph.is_connected()


# -- reconstruction protocol ------------------------------------------------------


@dataclass
class ReconstructionResult:
    successes: int
    attempts: int
    molecules: int
    skipped: int = 0

    @property
    def rate_pct(self) -> float:
        return 100.0 * self.successes / self.attempts if self.attempts else 0.0


def reconstruction_rate(
    model,
    molecules: Sequence[MolecularGraph],
    rng: np.random.Generator,
    encodings_per_molecule: int = 20,
    molecule_cap: int = 5000,
    decode_fn: Optional[Callable] = None,
    success_fn: Optional[Callable[[MolecularGraph, MolecularGraph], bool]] = None,
) -> ReconstructionResult:
    """Encode each molecule, draw latent samples, decode each once.

    A decode succeeds when its canonical form matches the input's (the
    default `success_fn`). `decode_fn(graph, rng)` can replace the model's
    decoder, e.g. with an oracle in tests.
    """
    if success_fn is None:
        success_fn = lambda original, decoded: canonical_form(original) == canonical_form(decoded)
    pool = molecules[:molecule_cap]
    successes = 0
    attempts = 0
    for graph in pool:
        encoding = None if decode_fn is not None else model.encode(graph)
        for _ in range(encodings_per_molecule):
            if decode_fn is not None:
                decoded = decode_fn(graph, rng)
            else:
                decoded = model.reconstruct_once(graph, rng, encoding=encoding)
            attempts += 1
            if success_fn(graph, decoded):
                successes += 1
    return ReconstructionResult(successes, attempts, len(pool))


# -- generation protocol ------------------------------------------------------------


@dataclass
class EvaluationReport:
    samples: int
    valid: int
    validity_pct: float
    validity_std: float
    novelty_pct: float
    novelty_std: float
    uniqueness_pct: float
    diversity_pct: float
    diversity_std: float
    fallback_rate_pct: float
    fingerprint_bits: int = FINGERPRINT_BITS
    reconstruction_pct: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_lines(self) -> list[str]:
        lines = [
            f"samples={self.samples}",
            f"valid={self.valid}",
            f"validity_pct={self.validity_pct:.2f}",
            f"validity_std={self.validity_std:.2f}",
            f"novelty_pct={self.novelty_pct:.2f}",
            f"novelty_std={self.novelty_std:.2f}",
            f"uniqueness_pct={self.uniqueness_pct:.2f}",
            f"diversity_pct={self.diversity_pct:.2f}",
            f"diversity_std={self.diversity_std:.2f}",
            f"fallback_rate_pct={self.fallback_rate_pct:.2f}",
            f"fingerprint_bits={self.fingerprint_bits}",
        ]
        if self.reconstruction_pct is not None:
            lines.insert(2, f"reconstruction_pct={self.reconstruction_pct:.2f}")
        return lines

    def as_table(self) -> str:
        # column order follows the usual %Rec/%Val/%Nov/%Uniq/%Div reporting
        rec = f"{self.reconstruction_pct:.2f}" if self.reconstruction_pct is not None else "NA"
        header = "%Rec.\t%Val.\t%Nov.\t%Uniq.\t%Div."
        row = (
            f"{rec}\t{self.validity_pct:.2f}\t{self.novelty_pct:.2f}"
            f"\t{self.uniqueness_pct:.2f}\t{self.diversity_pct:.2f}"
        )
        return header + "\n" + row


def _bernoulli_std_pct(p: float) -> float:
    return 100.0 * float(np.sqrt(max(p * (1.0 - p), 0.0)))


def generation_report(
    model,
    train_graphs: Sequence[MolecularGraph],
    rng: np.random.Generator,
    samples: int = 20000,
    fingerprint_bits: int = FINGERPRINT_BITS,
) -> EvaluationReport:
    """Decode `samples` prior draws once each and score them against the
    training set."""
    train_canon = {canonical_form(g) for g in train_graphs}
    train_fps = [fingerprint(g, fingerprint_bits) for g in train_graphs]

    valid_graphs: list[MolecularGraph] = []
    fallbacks = 0
    for _ in range(samples):
        result = model.generate(rng)
        if result.fallback_count > 0:
            fallbacks += 1
        if is_valid_molecule(result.graph):
            valid_graphs.append(result.graph)

    n_valid = len(valid_graphs)
    validity = n_valid / samples if samples else 0.0

    canon = [canonical_form(g) for g in valid_graphs]
    novel_flags = [c not in train_canon for c in canon]
    novelty = float(np.mean(novel_flags)) if canon else 0.0
    uniqueness = len(set(canon)) / n_valid if n_valid else 0.0

    diversity_vals = []
    if train_fps:
        train_matrix = np.stack(train_fps)
        for g in valid_graphs:
            fp = fingerprint(g, fingerprint_bits)
            inter = np.logical_and(train_matrix, fp).sum(axis=1)
            union = np.logical_or(train_matrix, fp).sum(axis=1)
            sims = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
            diversity_vals.append(1.0 - float(sims.max()))
    diversity = float(np.mean(diversity_vals)) if diversity_vals else 0.0
    diversity_std = float(np.std(diversity_vals)) if diversity_vals else 0.0

    return EvaluationReport(
        samples=samples,
        valid=n_valid,
        validity_pct=100.0 * validity,
        validity_std=_bernoulli_std_pct(validity),
        novelty_pct=100.0 * novelty,
        novelty_std=_bernoulli_std_pct(novelty),
        uniqueness_pct=100.0 * uniqueness,
        diversity_pct=100.0 * diversity,
        diversity_std=100.0 * diversity_std,
        fallback_rate_pct=100.0 * fallbacks / samples if samples else 0.0,
        fingerprint_bits=fingerprint_bits,
    )
