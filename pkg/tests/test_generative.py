"""Adversarial-wrapper tests: sampling, critic, variety/diversity losses."""

import numpy as np
import pytest

from scantraj import autodiff as ad
from scantraj import generative as gen
from scantraj import model as sm
from scantraj.data import SceneWindow
from scantraj.errors import NumericError

from test_model import dyadic_walkers, make_scene, micro_cfg


def gen_cfg(**overrides):
    overrides.setdefault("generative", True)
    overrides.setdefault("noise_dim", 4)
    return micro_cfg(**overrides)


def build_generative(seed=7, **overrides):
    cfg = gen_cfg(**overrides)
    params = sm.build_params(cfg, ad.RngHub(seed))
    return sm.ScanModel(cfg, params)


def result_from_positions(positions):
    """A ForwardResult made of constants, for hand-value loss tests."""
    positions = np.asarray(positions, dtype=np.float64)
    n, t = positions.shape[:2]
    pos_nodes = [[ad.constant(positions[p, s]) for s in range(t)]
                 for p in range(n)]
    disp = np.diff(np.concatenate([positions[:, :1], positions], axis=1), axis=1)
    disp_nodes = [[ad.constant(disp[p, s]) for s in range(t)] for p in range(n)]
    return sm.ForwardResult(list(range(1, n + 1)), disp_nodes, pos_nodes,
                            np.ones((n, t), dtype=bool))


def set_from_arrays(*sample_positions):
    results = [result_from_positions(p) for p in sample_positions]
    n = np.asarray(sample_positions[0]).shape[0]
    return gen.PredictionSet(list(range(1, n + 1)), results,
                             np.zeros((len(results), 4)))


class TestNoise:
    def test_spec_validation(self):
        gen.NoiseSpec(8).validate()
        with pytest.raises(ValueError):
            gen.NoiseSpec(0).validate()
        with pytest.raises(ValueError):
            gen.NoiseSpec(4, distribution="uniform").validate()

    def test_draw_shape_and_determinism(self):
        spec = gen.NoiseSpec(5)
        a = spec.draw(np.random.default_rng(3))
        b = spec.draw(np.random.default_rng(3))
        assert a.shape == (5,)
        assert np.array_equal(a, b)

    def test_zero_noise_hidden_is_deterministic(self):
        with ad.Tape():
            h = ad.constant(np.arange(4.0))
            w = ad.constant(np.ones((4, 8)) * 0.1)
            b = ad.constant(np.zeros(4))
            out1 = gen.init_decoder_hidden(h, np.zeros(4), w, b)
            out2 = gen.init_decoder_hidden(h, np.zeros(4), w, b)
            assert out1.shape == (4,)
            assert np.array_equal(out1.values, out2.values)

    def test_distinct_noise_gives_distinct_hidden(self):
        with ad.Tape():
            h = ad.constant(np.arange(4.0))
            w = ad.constant(np.ones((4, 8)) * 0.1)
            b = ad.constant(np.zeros(4))
            out1 = gen.init_decoder_hidden(h, np.full(4, 2.0), w, b)
            out2 = gen.init_decoder_hidden(h, np.full(4, -2.0), w, b)
            assert not np.array_equal(out1.values, out2.values)


class TestGanConfig:
    def test_defaults_valid(self):
        gen.GanConfig().validate()

    @pytest.mark.parametrize("bad", [dict(k=0), dict(diversity_weight=-1.0),
                                     dict(variety_weight=-0.5)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            gen.GanConfig(**bad).validate()


class TestSampling:
    def test_fixed_seed_reproduces_bitwise(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        sets = []
        for _ in range(2):
            m = build_generative()
            with ad.Tape():
                sets.append(gen.sample_predictions(
                    m, scene, 3, np.random.default_rng(99)))
        assert np.array_equal(sets[0].noises, sets[1].noises)
        assert np.array_equal(sets[0].positions_array(),
                              sets[1].positions_array())

    def test_shapes_and_one_noise_per_sample(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        m = build_generative()
        with ad.Tape():
            sample_set = gen.sample_predictions(m, scene, 4,
                                                np.random.default_rng(1))
        assert sample_set.k == 4
        assert sample_set.noises.shape == (4, 4)
        assert sample_set.positions_array().shape == (4, 2, 2, 2)

    def test_samples_differ_between_draws(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        m = build_generative()
        with ad.Tape():
            sample_set = gen.sample_predictions(m, scene, 2,
                                                np.random.default_rng(1))
        pos = sample_set.positions_array()
        assert not np.array_equal(pos[0], pos[1])

    def test_requires_generative_config(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        m = sm.ScanModel(micro_cfg(), sm.build_params(micro_cfg(), ad.RngHub(7)))
        with pytest.raises(ValueError):
            with ad.Tape():
                gen.sample_predictions(m, scene, 2, np.random.default_rng(1))


class TestDiscriminator:
    def test_untrained_scores_in_open_interval(self):
        cfg = gen_cfg()
        params = gen.build_discriminator_params(cfg, ad.RngHub(5))
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        with ad.Tape():
            probs = gen.discriminate(cfg, params, scene.ped_ids,
                                     gen.real_position_nodes(scene), scene.mask)
            for prob in probs:
                assert 0.0 < float(prob.values[0]) < 1.0

    def test_permutation_equivariant(self):
        cfg = gen_cfg()
        params = gen.build_discriminator_params(cfg, ad.RngHub(5))
        paths = dyadic_walkers(5)
        scene = make_scene(paths, obs_len=3)
        perm = [1, 0]
        permuted = SceneWindow(ped_ids=[scene.ped_ids[i] for i in perm],
                               positions=scene.positions[:, perm].copy(),
                               mask=scene.mask[:, perm].copy(), obs_len=3)
        with ad.Tape():
            base = [float(p.values[0]) for p in gen.discriminate(
                cfg, params, scene.ped_ids,
                gen.real_position_nodes(scene), scene.mask)]
        with ad.Tape():
            swapped = [float(p.values[0]) for p in gen.discriminate(
                cfg, params, permuted.ped_ids,
                gen.real_position_nodes(permuted), permuted.mask)]
        assert swapped == [base[1], base[0]]

    def test_learns_to_separate_toy_data(self):
        # Real: smooth straight walks. Fake: jittery random walks. A few
        # critic-only Adam steps must push mean real score above mean fake.
        cfg = gen_cfg(obs_len=3, pred_len=2)
        hub = ad.RngHub(17)
        params = gen.build_discriminator_params(cfg, hub)
        opt = ad.Adam(params, lr=0.01)
        rng = np.random.default_rng(8)

        def real_scene():
            start = rng.uniform(-2, 2, size=2)
            vel = rng.uniform(-0.4, 0.4, size=2)
            path = start + np.arange(5)[:, None] * vel
            return make_scene(path[None, :, :], obs_len=3)

        def fake_scene():
            steps = rng.normal(scale=0.6, size=(5, 2))
            path = np.cumsum(steps, axis=0)
            return make_scene(path[None, :, :], obs_len=3)

        for _ in range(40):
            with ad.Tape() as tape:
                real = gen.discriminator_logits(
                    cfg, params, [1], gen.real_position_nodes(real_scene()),
                    np.ones((5, 1), dtype=bool))
                fake = gen.discriminator_logits(
                    cfg, params, [1], gen.real_position_nodes(fake_scene()),
                    np.ones((5, 1), dtype=bool))
                loss = ad.add(gen.bce_real(real), gen.bce_fake(fake))
                params.zero_grads()
                tape.backward(loss)
                opt.step()

        def mean_score(scene_fn, n=20):
            total = 0.0
            for _ in range(n):
                with ad.Tape():
                    prob = gen.discriminate(
                        cfg, params, [1], gen.real_position_nodes(scene_fn()),
                        np.ones((5, 1), dtype=bool))[0]
                    total += float(prob.values[0])
            return total / n

        assert mean_score(real_scene) > mean_score(fake_scene)

    def test_empty_crowd_gives_no_logits(self):
        cfg = gen_cfg()
        params = gen.build_discriminator_params(cfg, ad.RngHub(5))
        with ad.Tape():
            assert gen.discriminator_logits(cfg, params, [], [],
                                            np.zeros((0, 0), bool)) == []


class TestBceHelpers:
    def test_zero_logit_costs_ln2(self):
        with ad.Tape():
            logit = ad.constant(np.zeros(1))
            assert abs(float(gen.bce_real([logit]).values) - np.log(2)) < 1e-15
            assert abs(float(gen.bce_fake([logit]).values) - np.log(2)) < 1e-15

    def test_perfect_classification_approaches_zero(self):
        with ad.Tape():
            confident_real = ad.constant(np.full(1, 20.0))
            confident_fake = ad.constant(np.full(1, -20.0))
            total = ad.add(gen.bce_real([confident_real]),
                           gen.bce_fake([confident_fake]))
            value = float(total.values)
        assert 0.0 <= value < 1e-8


class TestVarietyLoss:
    def test_k1_equals_trajectory_loss_exactly(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        m = build_generative()
        with ad.Tape():
            sample_set = gen.sample_predictions(m, scene, 1,
                                                np.random.default_rng(2))
            variety = gen.variety_loss(scene, sample_set)
            plain = sm.trajectory_loss(sample_set.results[0], scene)
            assert float(variety.values) == float(plain.values)

    def test_exact_sample_gives_zero(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        truth = scene.positions[3:].transpose(1, 0, 2)
        with ad.Tape():
            sample_set = set_from_arrays(truth + 0.7, truth)
            loss = gen.variety_loss(scene, sample_set)
            assert float(loss.values) == 0.0

    def test_argmin_selection(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        truth = scene.positions[3:].transpose(1, 0, 2)
        with ad.Tape():
            sample_set = set_from_arrays(truth + 0.3, truth + 0.7)
            loss = gen.variety_loss(scene, sample_set)
            # squared-error mean of the 0.3-offset sample: 2 * 0.3^2
            assert abs(float(loss.values) - 2 * 0.09) < 1e-12

    def test_gradient_only_through_selected_sample(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        m = build_generative()
        with ad.Tape() as tape:
            sample_set = gen.sample_predictions(m, scene, 3,
                                                np.random.default_rng(4))
            loss = gen.variety_loss(scene, sample_set)
            tape.backward(loss)
            ades = []
            for result in sample_set.results:
                pos = result.positions()
                truth = scene.positions[3:].transpose(1, 0, 2)
                ades.append(float(np.linalg.norm(pos - truth, axis=-1).mean()))
            best = int(np.argmin(ades))
            for idx, result in enumerate(sample_set.results):
                grads = [np.abs(node.grad).max()
                         for row in result.pos_nodes for node in row]
                if idx == best:
                    assert max(grads) > 0.0
                else:
                    assert max(grads) == 0.0

    def test_all_masked_returns_none(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        scene.mask[3:] = False
        m = build_generative()
        with ad.Tape():
            sample_set = gen.sample_predictions(m, scene, 2,
                                                np.random.default_rng(2))
            assert gen.variety_loss(scene, sample_set) is None


class TestDiversityLoss:
    def test_one_meter_offset_single_ped(self):
        base = np.zeros((1, 4, 2))
        offset = base + np.array([0.0, 1.0])
        with ad.Tape():
            loss = gen.diversity_loss(set_from_arrays(base, offset))
            assert abs(float(loss.values) - np.exp(-1.0)) < 1e-15

    def test_identical_samples_hit_pair_count(self):
        base = np.random.default_rng(0).normal(size=(3, 4, 2))
        with ad.Tape():
            loss = gen.diversity_loss(set_from_arrays(base, base, base, base))
            # per pedestrian k(k-1)/2 = 6 pairs at exp(0), N-normalized
            assert abs(float(loss.values) - 6.0) < 1e-12

    def test_far_apart_samples_decay_to_zero(self):
        base = np.zeros((1, 4, 2))
        with ad.Tape():
            loss = gen.diversity_loss(set_from_arrays(base, base + 1000.0))
            assert float(loss.values) < 1e-300

    def test_k_below_two_is_zero(self):
        base = np.zeros((2, 4, 2))
        with ad.Tape():
            assert float(gen.diversity_loss(set_from_arrays(base)).values) == 0.0

    def test_sample_permutation_symmetry(self):
        rng = np.random.default_rng(6)
        samples = [rng.normal(size=(2, 5, 2)) for _ in range(3)]
        with ad.Tape():
            a = float(gen.diversity_loss(set_from_arrays(*samples)).values)
            b = float(gen.diversity_loss(
                set_from_arrays(samples[2], samples[0], samples[1])).values)
        assert abs(a - b) < 1e-12

    def test_strictly_decreasing_in_pair_distance(self):
        base = np.zeros((1, 4, 2))
        with ad.Tape():
            near = float(gen.diversity_loss(
                set_from_arrays(base, base + 0.5)).values)
            far = float(gen.diversity_loss(
                set_from_arrays(base, base + 0.6)).values)
        assert far < near

    def test_gradient_repels_samples(self):
        scene = make_scene(dyadic_walkers(5), obs_len=3)
        m = build_generative()
        with ad.Tape() as tape:
            sample_set = gen.sample_predictions(m, scene, 2,
                                                np.random.default_rng(4))
            loss = gen.diversity_loss(sample_set)
            tape.backward(loss)
        some = any(np.abs(p.grad).max() > 0 for _, p in m.params.items())
        assert some


class TestSampleSpread:
    def test_constant_offset(self):
        base = np.zeros((2, 1, 4, 2))
        base[1, :, :, 1] = 1.0
        assert gen.sample_spread(base) == 1.0

    def test_identical_samples_zero(self):
        rng = np.random.default_rng(0)
        one = rng.normal(size=(1, 2, 4, 2))
        assert gen.sample_spread(np.concatenate([one, one])) == 0.0

    def test_single_sample_zero(self):
        assert gen.sample_spread(np.zeros((1, 2, 4, 2))) == 0.0


class TestGanTrainStep:
    def make_batch(self):
        return [make_scene(dyadic_walkers(5), obs_len=3),
                make_scene(dyadic_walkers(5, speeds=((0.25, 0.0), (0.0, 0.25))),
                           obs_len=3)]

    def setup_pair(self, seed=21, **cfg_overrides):
        m = build_generative(seed=seed, **cfg_overrides)
        disc = gen.build_discriminator_params(m.cfg, ad.RngHub(seed + 1))
        return m, disc

    def test_step_updates_both_parameter_sets(self):
        m, disc = self.setup_pair()
        gen_before = {k: v.values.copy() for k, v in m.params.items()}
        disc_before = {k: v.values.copy() for k, v in disc.items()}
        report = gen.gan_train_step(
            m, disc, self.make_batch(), gen.GanConfig(k=2),
            ad.Adam(m.params, lr=0.001), ad.Adam(disc, lr=0.001),
            np.random.default_rng(3))
        assert set(report) == {"disc", "adversarial", "variety",
                               "diversity", "total"}
        assert any(not np.array_equal(gen_before[k], v.values)
                   for k, v in m.params.items())
        assert any(not np.array_equal(disc_before[k], v.values)
                   for k, v in disc.items())

    def test_lambda_zero_total_excludes_diversity(self):
        m, disc = self.setup_pair()
        report = gen.gan_train_step(
            m, disc, self.make_batch(), gen.GanConfig(k=2, diversity_weight=0.0),
            ad.Adam(m.params, lr=0.0), ad.Adam(disc, lr=0.0),
            np.random.default_rng(3))
        expected = report["adversarial"] + report["variety"]
        assert abs(report["total"] - expected) < 1e-12
        assert report["diversity"] > 0.0   # still reported, just not weighted

    def test_doubling_k_doubles_decode_passes(self):
        counts = []
        for k in (2, 4):
            m, disc = self.setup_pair()
            gen.gan_train_step(m, disc, self.make_batch()[:1],
                               gen.GanConfig(k=k),
                               ad.Adam(m.params, lr=0.001),
                               ad.Adam(disc, lr=0.001),
                               np.random.default_rng(3))
            counts.append(m.decode_calls)
        assert counts[1] == 2 * counts[0]

    def test_nan_guard_names_the_term(self):
        m, disc = self.setup_pair()
        disc["disc.score.W"].values[:] = np.nan
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError, match="discriminator"):
                gen.gan_train_step(m, disc, self.make_batch(),
                                   gen.GanConfig(k=2),
                                   ad.Adam(m.params, lr=0.001),
                                   ad.Adam(disc, lr=0.001),
                                   np.random.default_rng(3))

    def test_empty_batch_rejected(self):
        m, disc = self.setup_pair()
        empty = SceneWindow(ped_ids=[], positions=np.zeros((5, 0, 2)),
                            mask=np.zeros((5, 0), dtype=bool), obs_len=3)
        with pytest.raises(ValueError):
            gen.gan_train_step(m, disc, [empty], gen.GanConfig(k=2),
                               ad.Adam(m.params, lr=0.001),
                               ad.Adam(disc, lr=0.001),
                               np.random.default_rng(3))
