"""Model container bundling parameters, vocabulary, configuration, and the
training-set histogram distribution, with checkpoint save/load."""
from __future__ import annotations

from dataclasses import asdict
from typing import Optional

import numpy as np

from .autodiff import Parameter
from .chemgraph import AtomType, AtomVocabulary, MolecularGraph
from .checkpoint import load_tensors, save_tensors
from .config import ModelConfig
from .decoder import (
    GenerationResult,
    generate_molecule,
    init_decoder_params,
    reconstruct_molecule,
)
from .encoder import encode, init_encoder_params
from .histograms import HistogramDistribution
from .training import init_property_params


class GenerativeModel:
    def __init__(
        self,
        vocab: AtomVocabulary,
        cfg: ModelConfig,
        distribution: Optional[HistogramDistribution],
        rng: np.random.Generator,
    ):
        self.vocab = vocab
        self.cfg = cfg
        self.distribution = distribution
        self.params: dict[str, Parameter] = {}
        self.params.update(init_encoder_params(len(vocab), cfg, rng))
        self.params.update(init_decoder_params(len(vocab), vocab.nu, cfg, rng))
        self.params.update(init_property_params(cfg, rng))

    # -- convenience wrappers -------------------------------------------------

    def encode(self, graph: MolecularGraph):
        return encode(graph, self.params, self.cfg)

    def generate(self, rng: np.random.Generator, collect_trace: bool = False) -> GenerationResult:
        if self.distribution is None:
            raise ValueError("model has no histogram distribution; preprocess first")
        return generate_molecule(
            self.params, self.vocab, self.distribution, self.cfg, rng, collect_trace
        )

    def reconstruct_once(
        self, graph: MolecularGraph, rng: np.random.Generator, encoding=None
    ) -> MolecularGraph:
        return reconstruct_molecule(graph, self.params, self.vocab, self.cfg, rng, encoding)

    # -- persistence ------------------------------------------------------------

    def save(self, path: str, extra_meta: Optional[dict] = None) -> None:
        meta = {
            "model_config": asdict(self.cfg),
            "vocab": [[t.symbol, t.valence] for t in self.vocab],
            "vocab_hash": self.vocab.fingerprint(),
            "hist_dist": self.distribution.serialize() if self.distribution else None,
            "extra": extra_meta or {},
        }
        save_tensors(path, {k: p.data for k, p in self.params.items()}, meta)

    @classmethod
    def load(cls, path: str) -> "GenerativeModel":
        tensors, meta = load_tensors(path)
        vocab = AtomVocabulary([AtomType(sym, val) for sym, val in meta["vocab"]])
        cfg = ModelConfig(**meta["model_config"])
        dist = (
            HistogramDistribution.deserialize(meta["hist_dist"])
            if meta.get("hist_dist")
            else None
        )
        model = cls(vocab, cfg, dist, np.random.default_rng(0))
        if set(tensors) != set(model.params):
            missing = set(model.params) - set(tensors)
            surplus = set(tensors) - set(model.params)
            raise ValueError(
                f"checkpoint does not match the architecture "
                f"(missing={sorted(missing)}, surplus={sorted(surplus)})"
            )
        for name, arr in tensors.items():
            if model.params[name].data.shape != arr.shape:
                raise ValueError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"expected {model.params[name].data.shape}"
                )
            model.params[name].data[...] = arr
        model._meta = meta
        return model

    def check_compatible(self, vocab: Optional[AtomVocabulary] = None) -> None:
        """Refuse to run against a vocabulary that differs from training."""
        if vocab is not None and vocab.fingerprint() != self.vocab.fingerprint():
            raise ValueError(
                "vocabulary mismatch: checkpoint was trained with "
                f"{[t.symbol for t in self.vocab]} (hash {self.vocab.fingerprint()}), "
                f"got {[t.symbol for t in vocab]} (hash {vocab.fingerprint()})"
            )
