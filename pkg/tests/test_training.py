import numpy as np
import pytest

from histvae.autodiff import Tape, Tensor
from histvae.chemgraph import MolecularGraph
from histvae.config import ModelConfig, RunConfig
from histvae.encoder import sample_prior
from histvae.histograms import HistogramDistribution
from histvae.model import GenerativeModel
from histvae.smiles import parse_smiles
from histvae.training import (
    LossBreakdown,
    build_trajectory,
    compute_loss,
    optimize_latent,
    predict_property,
    proxy_property_values,
    train_loop,
)

CFG = ModelConfig(latent_dim=6, hidden_dim=5, mp_steps=2, mlp_hidden=8)


def make_run(**kw) -> RunConfig:
    base = dict(latent_dim=6, hidden_dim=5, mp_steps=2, mlp_hidden=8,
                epochs=1, batch_size=4, lambda_latent=0.3, lambda_opt=10.0)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture()
def model(vocab, toy_corpus, rng):
    dist = HistogramDistribution.from_graphs(toy_corpus[:50])
    return GenerativeModel(vocab, CFG, dist, rng)


class TestTrajectory:
    def test_single_atom(self, vocab, rng):
        g = MolecularGraph(vocab, [0], implicit_h=[4])
        traj = build_trajectory(g, rng)
        assert traj.atom_order == (0,)
        assert traj.decisions == (None,)

    def test_path_center_start(self, vocab):
        g = parse_smiles("CNO", vocab)  # path C-N-O, center N = atom 1
        # force the start atom by seeding until BFS starts at the center
        for seed in range(50):
            rng = np.random.default_rng(seed)
            traj = build_trajectory(g, rng)
            if traj.atom_order[0] == 1:
                bonds = [d for d in traj.decisions[: 3] if d is not None]
                assert len(bonds) == 2  # both neighbors bonded in N's session
                assert traj.decisions[2] is None
                break
        else:
            pytest.fail("no seed started BFS at the center atom")

    def test_replay_reproduces_source(self, vocab, toy_corpus, rng):
        # replay oracle: walking the decisions over the relabeled atoms must
        # rebuild the molecule, independent of any network
        for g in toy_corpus[:60]:
            traj = build_trajectory(g, rng)
            rebuilt = MolecularGraph(vocab, traj.types)
            focus_queue = [0]
            focus = 0
            seen = {0}
            for decision in traj.decisions:
                if decision is None:
                    focus_queue.pop(0)
                    if focus_queue:
                        focus = focus_queue[0]
                    continue
                u, order = decision
                rebuilt = rebuilt.with_bond(focus, u, order)
                if u not in seen:
                    seen.add(u)
                    focus_queue.append(u)
            assert rebuilt.complete_with_hydrogens() == traj.relabeled_source

    def test_each_atom_visited_once(self, vocab, toy_corpus, rng):
        for g in toy_corpus[:40]:
            traj = build_trajectory(g, rng)
            assert sorted(traj.atom_order) == list(range(g.num_atoms))

    def test_disconnected_rejected(self, vocab, rng):
        g = MolecularGraph(vocab, [0, 0], implicit_h=[4, 4])
        with pytest.raises(ValueError):
            build_trajectory(g, rng)

    def test_fresh_trajectories_differ(self, vocab, rng):
        g = parse_smiles("CC(N)CO", vocab)
        seen = {build_trajectory(g, rng).atom_order for _ in range(30)}
        assert len(seen) > 1  # Monte Carlo over orders, not a fixed one


class TestLoss:
    def test_zero_weights_leave_only_recon(self, model, vocab, toy_corpus, rng):
        run = make_run(lambda_latent=0.0, lambda_opt=0.0)
        g = toy_corpus[5]
        total, breakdown = compute_loss(g, None, model.params, vocab, CFG, run, rng)
        assert breakdown.total == breakdown.recon
        assert breakdown.opt == 0.0

    def test_weight_linearity_is_exact(self):
        breakdown = LossBreakdown(recon=1.25, latent=0.5, opt=2.0,
                                  lambda_latent=0.3, lambda_opt=10.0)
        assert breakdown.total == 1.25 + 0.3 * 0.5 + 10.0 * 2.0
        for l1 in (0.0, 0.5, 1.0, 2.0):
            scaled = LossBreakdown(1.25, 0.5, 2.0, l1, 10.0)
            assert scaled.total == pytest.approx(1.25 + l1 * 0.5 + 20.0, abs=0)

    def test_missing_property_with_opt_weight(self, model, vocab, toy_corpus, rng):
        run = make_run(lambda_opt=1.0)
        with pytest.raises(ValueError):
            compute_loss(toy_corpus[0], None, model.params, vocab, CFG, run, rng)

    def test_loss_decreases_on_toy_set(self, vocab, rng):
        # trains a tiny model on 10 molecules; the total must drop >= 90%
        smis = ["C", "CC", "CO", "CN", "CCO", "C=O", "CF", "CCN", "C=C", "OCO"]
        corpus = [parse_smiles(s, vocab) for s in smis]
        dist = HistogramDistribution.from_graphs(corpus)
        run = make_run(latent_dim=12, hidden_dim=10, mlp_hidden=16,
                       epochs=300, batch_size=10, lr=3e-3,
                       lambda_latent=0.01, lambda_opt=1.0)
        model = GenerativeModel(vocab, run.model_config(), dist, rng)
        history = train_loop(
            corpus, [None] * 10, model.params, vocab, run, rng, log_fn=lambda s: None
        )
        assert history[-1].total <= 0.1 * history[0].total

    def test_gradient_reaches_every_parameter(self, model, vocab, toy_corpus, rng):
        # dead-parameter audit: every element and bond order, arranged so bond
        # decisions after a double/triple bond still have real alternatives
        # (a forced stop is a saturated softmax and correctly contributes no
        # gradient)
        batch = []
        for smiles in ("CC(N)(O)F", "C=CC", "N#CC", "OCF"):
            batch.append(parse_smiles(smiles, vocab))
        run = make_run(lambda_opt=1.0)
        props = proxy_property_values(batch)
        from histvae.autodiff import add_n, scale

        for p in model.params.values():
            p.zero_grad()
        with Tape() as tape:
            losses = [
                compute_loss(g, pr, model.params, vocab, CFG, run, rng)[0]
                for g, pr in zip(batch, props)
            ]
            loss = scale(add_n(losses), 0.25)
        tape.backward(loss)
        dead = [k for k, p in model.params.items() if np.all(p.grad == 0)]
        assert not dead, f"parameters with zero gradient: {dead}"


class TestTrainLoop:
    def test_zero_epochs_still_checkpoints(self, model, vocab, toy_corpus, rng, tmp_path):
        run = make_run(epochs=0, lambda_opt=0.0)
        calls = []
        history = train_loop(
            toy_corpus[:4], [None] * 4, model.params, vocab, run, rng,
            checkpoint_fn=lambda e: calls.append(e), log_fn=lambda s: None,
        )
        assert history == []
        assert calls == [0]

    def test_deterministic_for_fixed_seed(self, vocab, toy_corpus):
        def run_once():
            rng = np.random.default_rng(11)
            dist = HistogramDistribution.from_graphs(toy_corpus[:6])
            model = GenerativeModel(vocab, CFG, dist, rng)
            run = make_run(epochs=2, batch_size=3, lambda_opt=1.0)
            train_loop(
                toy_corpus[:6],
                proxy_property_values(toy_corpus[:6]),
                model.params, vocab, run, rng, log_fn=lambda s: None,
            )
            return {k: p.data.copy() for k, p in model.params.items()}

        a, b = run_once(), run_once()
        for key in a:
            np.testing.assert_array_equal(a[key], b[key])

    def test_epoch_log_format(self, model, vocab, toy_corpus, rng):
        lines = []
        run = make_run(epochs=2, lambda_opt=0.0)
        train_loop(toy_corpus[:4], [None] * 4, model.params, vocab, run, rng,
                   log_fn=lines.append)
        epoch_lines = [ln for ln in lines if ln.startswith("epoch=")]
        assert len(epoch_lines) == 2
        for field in ("recon=", "latent=", "opt=", "total="):
            assert field in epoch_lines[0]

    def test_empty_dataset_rejected(self, model, vocab, rng):
        with pytest.raises(ValueError):
            train_loop([], [], model.params, vocab, make_run(), rng)


class TestOptimizeLatent:
    def test_zero_steps_returns_input(self, model, rng):
        z = sample_prior(3, CFG.latent_dim, rng)
        out, history = optimize_latent(z, model.params, CFG, steps=0)
        np.testing.assert_array_equal(out.data, z.data)
        assert len(history) == 1

    def test_linear_property_head_moves_by_gradient(self, vocab, rng):
        # with the second layer linear in the hidden relu output zeroed except
        # one passthrough, the analytic one-step move is step * w / m
        model = GenerativeModel(vocab, CFG, None, rng)
        w = rng.standard_normal(CFG.latent_dim).astype(np.float32)
        model.params["prop.w1"].data[...] = 0.0
        model.params["prop.w1"].data[:, 0] = w  # hidden_0 = w . mean(z)
        model.params["prop.b1"].data[...] = 0.0
        model.params["prop.b1"].data[0] = 100.0  # keep the relu active
        model.params["prop.w2"].data[...] = 0.0
        model.params["prop.w2"].data[0, 0] = 1.0
        model.params["prop.b2"].data[...] = 0.0
        m = 4
        z = Tensor(rng.standard_normal((m, CFG.latent_dim)).astype(np.float32))
        out, _ = optimize_latent(z, model.params, CFG, steps=1, step_size=0.1)
        expected = z.data + 0.1 * (w / m)[None, :]
        np.testing.assert_allclose(out.data, expected, rtol=1e-4, atol=1e-6)

    def test_ascent_never_decreases_prediction(self, model, rng):
        for _ in range(30):
            z = sample_prior(int(rng.integers(1, 6)), CFG.latent_dim, rng)
            start = predict_property(z, model.params, CFG).item()
            _, history = optimize_latent(z, model.params, CFG, steps=25, step_size=0.2)
            assert min(history) >= start - 1e-6
            assert all(b >= a - 1e-6 for a, b in zip(history, history[1:]))

    def test_descend_direction(self, model, rng):
        z = sample_prior(3, CFG.latent_dim, rng)
        _, history = optimize_latent(z, model.params, CFG, direction="descend",
                                     steps=25, step_size=0.2)
        assert all(b <= a + 1e-6 for a, b in zip(history, history[1:]))

    def test_bad_direction(self, model, rng):
        with pytest.raises(ValueError):
            optimize_latent(sample_prior(2, CFG.latent_dim, rng), model.params, CFG,
                            direction="sideways")
