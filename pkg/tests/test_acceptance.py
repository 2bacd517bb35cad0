"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavyweight fixtures
(10,000 shared generations, the 50-molecule memorization run) are session
scoped, so the suite stays within its runtime budgets.
"""
import itertools
import time

import numpy as np
import pytest
from scipy import stats

from gradcheck import finite_difference_check, leaf
from histvae.autodiff import Tensor, sum_
from histvae.chemgraph import BOND_ORDERS, MolecularGraph, canonical_form
from histvae.config import ModelConfig, RunConfig
from histvae.decoder import (
    TRAINING,
    decode_bonds,
    edge_mask,
    bond_order_mask,
    init_decoder_params,
    initialize_decoder_state,
)
from histvae.encoder import init_encoder_params, sample_prior
from histvae.histograms import HistogramDistribution, ValenceHistogram
from histvae.metrics import is_valid_molecule, reconstruction_rate
from histvae.model import GenerativeModel
from histvae.smiles import parse_smiles, write_smiles
from histvae.training import (
    build_trajectory,
    init_property_params,
    optimize_latent,
    predict_property,
    proxy_property_values,
    train_loop,
)

GENERATIONS_PER_MODEL = 5000  # criterion 1 splits its 10,000 across (a)+(b)


def report(criterion: int, label: str) -> None:
    print(f"\nACCEPTANCE {criterion} ({label}): PASS")


@pytest.fixture(scope="session")
def toy_trained(vocab, toy_corpus):
    """50-molecule memorization run shared by criteria 1, 2, 6 and 10."""
    subset = sorted(toy_corpus, key=lambda g: (g.num_atoms, canonical_form(g)))[:50]
    dist = HistogramDistribution.from_graphs(subset)
    run = RunConfig(
        latent_dim=12, hidden_dim=10, mp_steps=2, mlp_hidden=16,
        epochs=300, batch_size=25, lr=3e-3,
        lambda_latent=0.01, lambda_opt=1.0, seed=0,
    )
    rng = np.random.default_rng(run.seed)
    model = GenerativeModel(vocab, run.model_config(), dist, rng)
    start = time.time()
    history = train_loop(
        subset, proxy_property_values(subset), model.params, vocab, run, rng,
        log_fn=lambda s: None,
    )
    return {
        "model": model,
        "subset": subset,
        "history": history,
        "train_seconds": time.time() - start,
        "run": run,
    }


@pytest.fixture(scope="session")
def shared_generations(vocab, toy_corpus, toy_trained):
    """10,000 generations: 5,000 from a randomly initialized model over the
    full-corpus distribution, 5,000 from the toy-trained model."""
    results = []
    start = time.time()

    random_model = GenerativeModel(
        vocab,
        ModelConfig(latent_dim=8, hidden_dim=8, mp_steps=3, mlp_hidden=12),
        HistogramDistribution.from_graphs(toy_corpus),
        np.random.default_rng(100),
    )
    rng = np.random.default_rng(101)
    for _ in range(GENERATIONS_PER_MODEL):
        results.append(random_model.generate(rng))

    trained = toy_trained["model"]
    rng = np.random.default_rng(102)
    for _ in range(GENERATIONS_PER_MODEL):
        results.append(trained.generate(rng))

    return {"results": results, "seconds": time.time() - start}


def test_criterion_1_validity_invariant(shared_generations):
    results = shared_generations["results"]
    assert len(results) == 2 * GENERATIONS_PER_MODEL
    invalid = [r for r in results if not is_valid_molecule(r.graph)]
    assert invalid == [], f"{len(invalid)} invalid molecules out of {len(results)}"
    for r in results[:200]:
        g = r.graph
        assert g.num_atoms > 0 and g.is_connected() and g.is_valence_valid()
    assert shared_generations["seconds"] < 600, "10k generations exceeded 10 minutes"
    report(1, f"validity invariant: 10,000/10,000 valid in "
              f"{shared_generations['seconds']:.0f}s")


def test_criterion_2_histogram_conditioning(shared_generations):
    results = shared_generations["results"]
    violations = 0
    checked = 0
    fallback_generations = 0
    for r in results:
        state = r.typing
        if state.fallback_count > 0:
            fallback_generations += 1
        for used, target, fb in zip(
            state.used_history, state.target_history, state.fallback_history
        ):
            if fb == 0:
                checked += 1
                if not used.is_compatible_with(target):
                    violations += 1
    assert violations == 0
    assert checked > 0
    rate = 100.0 * fallback_generations / len(results)
    report(2, f"histogram conditioning: 0 violations over {checked} steps; "
              f"fallback rate {rate:.2f}% (reported, not bounded)")


def test_criterion_3_mask_exactness(vocab):
    disagreements = 0
    comparisons = 0
    for n_atoms in (1, 2, 3, 4):
        for types in itertools.combinations_with_replacement(range(4), n_atoms):
            pairs = list(itertools.combinations(range(n_atoms), 2))
            for orders in itertools.product((0, 1, 2, 3), repeat=len(pairs)):
                bonds = [(u, v, o) for (u, v), o in zip(pairs, orders) if o]
                try:
                    graph = MolecularGraph(vocab, types, bonds=bonds)
                except ValueError:
                    continue
                for focus in range(n_atoms):
                    mask = edge_mask(graph, focus)
                    assert mask[n_atoms] == 1
                    for u in range(n_atoms):
                        order_mask = bond_order_mask(graph, focus, u)
                        for k in BOND_ORDERS:
                            try:
                                graph.with_bond(focus, u, k)
                                legal = True
                            except ValueError:
                                legal = False
                            allowed = bool(mask[u]) and bool(order_mask[k - 1])
                            comparisons += 1
                            if allowed != legal:
                                disagreements += 1
    assert disagreements == 0
    report(3, f"mask exactness: 0/{comparisons} disagreements with the brute-force oracle")


def test_criterion_4_gradient_correctness(vocab):
    start = time.time()
    rng = np.random.default_rng(7)
    cfg = ModelConfig(latent_dim=5, hidden_dim=4, mlp_hidden=6, mp_steps=2)
    nu = vocab.nu

    def params64(init_fn, *args):
        params = init_fn(*args, cfg, rng) if args else init_fn(cfg, rng)
        return {
            k: Tensor(p.data.astype(np.float64), dtype=np.float64, track=True)
            for k, p in params.items()
        }

    enc = params64(init_encoder_params, len(vocab))
    dec = params64(init_decoder_params, len(vocab), nu)
    prop = params64(init_property_params)

    from histvae.autodiff import (
        concat, cross_entropy, linear, masked_softmax, relu, reshape, tanh_,
    )

    checks = {}
    trials = 10

    def run_check(name, build, leaves):
        worst = 0.0
        for _ in range(trials):
            for t in leaves:
                t.data[...] = 0.5 * rng.standard_normal(t.shape)
            worst = max(worst, finite_difference_check(build, leaves))
        checks[name] = worst

    # every differentiable primitive
    from histvae.autodiff import (
        add, exp_, gaussian_kl, log_, mul, neg, sigmoid, sub, sum_row_groups,
        take_rows, tile_rows,
    )
    from histvae.autodiff import concat as cat_, cross_entropy as ce_
    from histvae.autodiff import gru_cell as gru_, masked_softmax as msm_
    from histvae.autodiff import matmul as mm_, mean as mean_, relu as relu_
    from histvae.autodiff import reshape as rs_, tanh_ as th_

    a2 = leaf(rng, (3, 4))
    b2 = leaf(rng, (4, 3))
    lv2 = leaf(rng, (3, 4))
    v1 = leaf(rng, (4,))
    r1 = leaf(rng, (1, 4))
    a2_const = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    softmax_mask = np.array([1.0, 0, 1, 1])
    run_check("matmul", lambda: sum_(mm_(a2, b2)), [a2, b2])
    run_check("add", lambda: sum_(add(a2, v1)), [a2, v1])
    run_check("sub/mul/neg", lambda: sum_(mul(sub(a2, a2_const), neg(a2))), [a2])
    run_check("concat/slice/tile", lambda: sum_(
        cat_([take_rows(a2, [2, 0]), tile_rows(r1, 2)], axis=0)), [a2, r1])
    run_check("mean", lambda: rs_(mean_(a2), ()), [a2])
    run_check("sigmoid/tanh", lambda: sum_(th_(sigmoid(a2))), [a2])
    run_check("exp/log", lambda: sum_(log_(add(exp_(v1), exp_(neg(v1))))), [v1])
    run_check("elementwise-mul", lambda: sum_(mul(a2, a2)), [a2])
    run_check("masked softmax", lambda: ce_(msm_(v1, softmax_mask), 2), [v1])
    run_check("neighbor-group sum", lambda: sum_(
        sum_row_groups(a2, [[0, 2], [], [1]])), [a2])
    run_check("gaussian KL", lambda: gaussian_kl(a2, lv2), [a2, lv2])

    worst_relu = 0.0
    for _ in range(trials):
        vals = rng.standard_normal((3, 4))
        vals[np.abs(vals) < 0.05] += 0.2  # central differences straddle the kink
        a2.data[...] = vals
        worst_relu = max(worst_relu, finite_difference_check(
            lambda: sum_(relu_(a2)), [a2]))
    checks["relu"] = worst_relu
    gx, gh = leaf(rng, (2, 3)), leaf(rng, (2, 4))
    gwx, gwh = leaf(rng, (3, 12), 0.5), leaf(rng, (4, 12), 0.5)
    gbx, gbh = leaf(rng, (12,), 0.2), leaf(rng, (12,), 0.2)

    def gru_prim():
        return sum_(gru_(gx, gh, gwx, gwh, gbx, gbh))

    worst_gru = 0.0
    for _ in range(trials):
        for t, s in zip((gx, gh, gwx, gwh, gbx, gbh), (1, 1, 0.5, 0.5, 0.2, 0.2)):
            t.data[...] = s * rng.standard_normal(t.shape)
        worst_gru = max(worst_gru, finite_difference_check(gru_prim, [gx, gh, gwx, gwh, gbx, gbh]))
    checks["gru primitive"] = worst_gru

    # typing context net + type head (histogram-conditioned typing)
    z_row = leaf(rng, (1, cfg.latent_dim))
    hist_feats = Tensor(rng.random((1, 2 * nu)), dtype=np.float64)
    mask = np.ones(len(vocab))

    def typing_loss():
        ctx = tanh_(linear(concat([z_row, hist_feats], axis=1), dec["dec.ctx.w"], dec["dec.ctx.b"]))
        logits = reshape(linear(concat([z_row, ctx], axis=1), dec["dec.type.w"], dec["dec.type.b"]),
                         (len(vocab),))
        return cross_entropy(masked_softmax(logits, mask), 1)

    run_check("typing context net + type head",
              typing_loss, [z_row, dec["dec.ctx.w"], dec["dec.ctx.b"],
                            dec["dec.type.w"], dec["dec.type.b"]])

    # edge-existence and bond-type MLPs
    from histvae.decoder import phi_dim

    phi = leaf(rng, (4, phi_dim(cfg)))

    def exist_loss():
        hidden = relu(linear(phi, dec["dec.exist.w1"], dec["dec.exist.b1"]))
        logits = reshape(linear(hidden, dec["dec.exist.w2"], dec["dec.exist.b2"]), (4,))
        return cross_entropy(masked_softmax(logits, np.ones(4)), 0)

    run_check("edge-existence MLP", exist_loss,
              [phi, dec["dec.exist.w1"], dec["dec.exist.b1"],
               dec["dec.exist.w2"], dec["dec.exist.b2"]])

    def bond_loss():
        hidden = relu(linear(phi, dec["dec.bond.w1"], dec["dec.bond.b1"]))
        logits = reshape(linear(hidden, dec["dec.bond.w2"], dec["dec.bond.b2"]), (4 * 3,))
        return cross_entropy(masked_softmax(logits, np.ones(12)), 5)

    run_check("bond-type MLP", bond_loss,
              [phi, dec["dec.bond.w1"], dec["dec.bond.b1"],
               dec["dec.bond.w2"], dec["dec.bond.b2"]])

    # bond-type message transforms + GRU through a full message-passing round
    from histvae.encoder import MessageStructure, message_round

    graph = parse_smiles("C(=O)C#N", vocab)
    structure = MessageStructure(graph)
    h_nodes = leaf(rng, (graph.num_atoms, cfg.hidden_dim))
    msg_leaves = [h_nodes] + [enc[f"enc.msg.{o}"] for o in (1, 2, 3)] + [
        enc["enc.gru.wx"], enc["enc.gru.wh"], enc["enc.gru.bx"], enc["enc.gru.bh"],
    ]

    def round_loss():
        return sum_(message_round(h_nodes, structure, enc, "enc", residual=True))

    run_check("message transforms + GRU round", round_loss, msg_leaves)

    # encoder posterior heads
    h_enc = leaf(rng, (3, cfg.hidden_dim))

    def heads_loss():
        mu = linear(h_enc, enc["enc.mu.w"], enc["enc.mu.b"])
        logvar = linear(h_enc, enc["enc.logvar.w"], enc["enc.logvar.b"])
        from histvae.autodiff import gaussian_kl

        return gaussian_kl(mu, logvar)

    run_check("encoder posterior heads", heads_loss,
              [h_enc, enc["enc.mu.w"], enc["enc.mu.b"],
               enc["enc.logvar.w"], enc["enc.logvar.b"]])

    # property-regression network
    z_all = leaf(rng, (4, cfg.latent_dim))

    def prop_loss():
        return predict_property(z_all, prop, cfg)

    run_check("property network", prop_loss,
              [z_all, prop["prop.w1"], prop["prop.b1"], prop["prop.w2"], prop["prop.b2"]])

    elapsed = time.time() - start
    assert elapsed < 120, f"gradient checks took {elapsed:.0f}s"
    worst = max(checks.values())
    assert worst <= 1e-4
    report(4, f"gradient correctness: worst relative error {worst:.2e} "
              f"across {len(checks)} primitive and composite checks in {elapsed:.0f}s")


def test_criterion_5_teacher_forcing_identity(vocab, toy_corpus):
    cfg = ModelConfig(latent_dim=7, hidden_dim=6, mp_steps=2, mlp_hidden=9)
    rng = np.random.default_rng(21)
    failures = 0
    for draw in range(3):
        params = init_decoder_params(len(vocab), vocab.nu, cfg, np.random.default_rng(draw))
        for g in toy_corpus:
            traj = build_trajectory(g, rng)
            z = sample_prior(g.num_atoms, cfg.latent_dim, rng)
            state = initialize_decoder_state(z, traj.types, vocab, params, cfg, rng, focus=0)
            out, _ = decode_bonds(state, params, cfg, TRAINING, rng, teacher=traj.decisions)
            if out != traj.relabeled_source:
                failures += 1
    assert failures == 0
    report(5, "teacher-forcing identity: 500 molecules x 3 parameter draws, exact")


def test_criterion_6_toy_memorization(toy_trained):
    history = toy_trained["history"]
    assert len(history) <= 300
    drop = 1.0 - history[-1].total / history[0].total
    assert drop >= 0.90, f"loss dropped only {100 * drop:.1f}%"

    model = toy_trained["model"]
    result = reconstruction_rate(
        model, toy_trained["subset"], np.random.default_rng(1),
        encodings_per_molecule=20,
    )
    assert result.attempts == 50 * 20
    assert result.rate_pct >= 50.0, f"reconstruction {result.rate_pct:.1f}% < 50%"
    assert toy_trained["train_seconds"] < 1800
    report(6, f"toy memorization: loss drop {100 * drop:.1f}%, reconstruction "
              f"{result.rate_pct:.1f}% ({toy_trained['train_seconds']:.0f}s training)")


def test_criterion_7_definitions_fidelity(vocab):
    methane = parse_smiles("C", vocab).valence_histogram(include_hydrogens=True)
    ethanol = parse_smiles("CCO", vocab).valence_histogram(include_hydrogens=True)
    assert methane.as_dict() == {1: 4, 4: 1}
    assert ethanol.as_dict() == {1: 6, 2: 1, 4: 2}
    assert methane.is_compatible_with(ethanol)
    assert not ethanol.is_compatible_with(methane)
    report(7, "definitions fidelity: methane/ethanol compatibility is one-directional")


def test_criterion_8_roundtrip_and_canonicalization(vocab, toy_corpus):
    start = time.time()
    rng = np.random.default_rng(8)
    for g in toy_corpus:
        out = write_smiles(g)
        back = parse_smiles(out, vocab)
        assert canonical_form(back) == canonical_form(g), out
    for g in toy_corpus:
        forms = {canonical_form(g.permuted(list(rng.permutation(g.num_atoms))))
                 for _ in range(100)}
        assert len(forms) == 1
    elapsed = time.time() - start
    assert elapsed < 60, f"round-trip suite took {elapsed:.0f}s"
    report(8, f"SMILES round-trip + canonicalization: 500 molecules, "
              f"100 permutations each, in {elapsed:.0f}s")


def test_criterion_9_distribution_sampling_statistics(toy_corpus):
    start = time.time()
    rng = np.random.default_rng(9)
    dist = HistogramDistribution.from_graphs(toy_corpus[:50])
    draws = 100_000

    # sample_initial against the weight proportions
    counts = {h: 0 for h, _ in dist}
    for _ in range(draws):
        hist, _ = dist.sample_initial(rng)
        counts[hist] += 1
    observed = np.array([counts[h] for h, _ in dist], float)
    expected = np.array([w for _, w in dist]) / dist.total_weight * draws
    sigma = np.sqrt(expected * (1 - expected / draws))
    assert np.all(np.abs(observed - expected) <= 3 * sigma)
    p_initial = stats.chisquare(observed, expected).pvalue
    assert p_initial > 0.001

    # sample_compatible restricted to a known pool
    used = ValenceHistogram.from_dict({4: 1}, dist.nu)
    min_atoms = 3
    pool = [(h, w) for h, w in dist if h.total >= min_atoms and used.is_compatible_with(h)]
    assert len(pool) >= 2
    counts = {h: 0 for h, _ in pool}
    for _ in range(draws):
        hist, fallback = dist.sample_compatible(used, min_atoms, rng)
        assert not fallback
        counts[hist] += 1
    observed = np.array([counts[h] for h, _ in pool], float)
    total = sum(w for _, w in pool)
    expected = np.array([w for _, w in pool]) / total * draws
    sigma = np.sqrt(expected * (1 - expected / draws))
    assert np.all(np.abs(observed - expected) <= 3 * sigma)
    p_compat = stats.chisquare(observed, expected).pvalue
    assert p_compat > 0.001

    elapsed = time.time() - start
    assert elapsed < 60
    report(9, f"sampling statistics: chi^2 p={p_initial:.3f} (initial), "
              f"p={p_compat:.3f} (restricted), {elapsed:.0f}s")


def test_criterion_10_latent_optimization(toy_trained):
    model = toy_trained["model"]
    cfg = model.cfg
    rng = np.random.default_rng(10)
    worst_dip = 0.0
    for _ in range(100):
        _, m = model.distribution.sample_initial(rng)
        z = sample_prior(m, cfg.latent_dim, rng)
        start_value = predict_property(z, model.params, cfg).item()
        _, history = optimize_latent(
            z, model.params, cfg, direction="ascend", steps=50, step_size=0.1
        )
        worst_dip = max(worst_dip, start_value - min(history))
        assert min(history) >= start_value - 1e-6
    report(10, f"latent optimization: 100 starts x 50 ascent steps, "
               f"worst dip {worst_dip:.2e} (tolerance 1e-6)")
