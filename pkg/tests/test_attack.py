import numpy as np
import pytest

from backdoorlab import attack
from backdoorlab.core import LinearHypothesis, PatchFunction, binary_loss
from backdoorlab.errors import (ConfigError, InconsistentPatchError,
                                NoOrthogonalComplementError)
from backdoorlab.learner import max_margin_erm
from backdoorlab.synth import sample_instance


@pytest.fixture(scope="module")
def small_instance():
    inst, clean = sample_instance(d=10, s=3, gamma=0.1, R=1.0, n=200,
                                  balance_target=0.5, seed=2)
    return inst, clean


class TestOrthogonalPatch:
    def test_unique_complement_direction(self):
        inst, _ = sample_instance(d=2, s=1, gamma=0.1, R=1.0, n=4,
                                  balance_target=0.5, seed=1)
        p = attack.orthogonal_patch(inst, t=1, magnitude=2.0, seed=0)
        # complement of a line in the plane is the other line, up to sign
        in_span = inst.A.T @ p.eta
        assert np.abs(in_span).max() <= 1e-9
        assert np.isclose(np.linalg.norm(p.eta), 2.0)

    def test_orthogonal_to_ground_truth(self, small_instance):
        inst, _ = small_instance
        p = attack.orthogonal_patch(inst, t=-1, magnitude=1.0, seed=5)
        assert abs(inst.w_star @ p.eta) <= 1e-9

    def test_projection_residual_and_norm(self, small_instance):
        inst, _ = small_instance
        p = attack.orthogonal_patch(inst, t=1, magnitude=3.5, seed=1)
        assert np.linalg.norm(inst.A.T @ p.eta) <= 1e-9
        assert np.isclose(np.linalg.norm(p.eta), 3.5)

    def test_direction_ignores_radius_scale(self):
        a, _ = sample_instance(d=8, s=2, gamma=0.1, R=1.0, n=4,
                               balance_target=0.5, seed=3)
        b = attack  # direction depends only on span(A) and seed
        p1 = b.orthogonal_patch(a, t=1, magnitude=1.0, seed=9)
        from dataclasses import replace
        a_scaled = replace(a, R=5.0)
        p2 = b.orthogonal_patch(a_scaled, t=1, magnitude=1.0, seed=9)
        assert np.allclose(p1.eta, p2.eta)

    def test_full_rank_subspace_fails(self):
        inst, _ = sample_instance(d=3, s=2, gamma=0.1, R=1.0, n=4,
                                  balance_target=0.5, seed=1)
        from dataclasses import replace
        square = replace(inst, d=3, s=3, A=np.eye(3),
                         w_star=np.array([1.0, 0.0, 0.0]))
        with pytest.raises(NoOrthogonalComplementError):
            attack.orthogonal_patch(square, t=1, magnitude=1.0, seed=0)


class TestRandomWatermark:
    def test_required_dim_formula(self):
        assert attack.required_watermark_dim(10, 0.1, 0.05, 1.0) == 6685

    def test_unit_norm(self, small_instance):
        inst, _ = small_instance
        for seed in range(5):
            p, _ = attack.random_watermark(inst, delta=0.05, C0=1.0, seed=seed)
            assert np.isclose(np.linalg.norm(p.eta), 1.0)

    def test_in_margin_frequency_small_scale(self):
        inst, _ = sample_instance(d=2000, s=10, gamma=0.1, R=1.0, n=2,
                                  balance_target=0.5, seed=4)
        hits = 0
        for seed in range(50):
            p, req = attack.random_watermark(inst, delta=0.05, C0=1.0, seed=seed)
            assert req == 6685
            hits += np.linalg.norm(inst.A.T @ p.eta) <= inst.gamma
        assert hits >= 45

    def test_bad_delta(self, small_instance):
        inst, _ = small_instance
        with pytest.raises(ConfigError):
            attack.random_watermark(inst, delta=1.5, C0=1.0, seed=0)


class TestBuildPoisonSet:
    def test_single_patch_contract(self, small_instance):
        inst, _ = small_instance
        p = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=7)
        poison = attack.build_poison_set(inst, [p], 5, seed=7)
        assert len(poison) == 5
        assert poison.is_poison.all()
        assert (poison.y == 1).all()
        # true labels of the unpatched sources are all -t
        unpatched = poison.X - p.eta
        assert (np.sign(unpatched @ inst.w_star) == -1).all()

    def test_identity_patch_allowed(self, small_instance):
        inst, _ = small_instance
        ident = PatchFunction.identity(inst.d, target_label=-1)
        poison = attack.build_poison_set(inst, [ident], 3, seed=1)
        assert len(poison) == 3
        assert (np.sign(poison.X @ inst.w_star) == 1).all()  # mislabeled clean points

    def test_two_patches_counting(self, small_instance):
        inst, _ = small_instance
        p1 = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=1)
        p2 = attack.orthogonal_patch(inst, t=-1, magnitude=1.0, seed=2)
        poison = attack.build_poison_set(inst, [p1, p2], 3, seed=3)
        assert len(poison) == 6
        assert (poison.y == 1).sum() == 3
        assert (poison.y == -1).sum() == 3

    def test_inconsistent_patch_rejected(self, small_instance):
        inst, _ = small_instance
        bad = PatchFunction(inst.w_star * 0.5, 1)
        with pytest.raises(InconsistentPatchError):
            attack.build_poison_set(inst, [bad], 2, seed=0)

    def test_consistency_tolerance_override(self, small_instance):
        inst, _ = small_instance
        slightly_off = PatchFunction(inst.w_star * 1e-4, 1)
        with pytest.raises(InconsistentPatchError):
            attack.build_poison_set(inst, [slightly_off], 2, seed=0)
        poison = attack.build_poison_set(inst, [slightly_off], 2, seed=0,
                                         consistency_tol=1e-3)
        assert len(poison) == 2

    def test_zero_training_error_hypothesis_exists(self, small_instance):
        inst, clean = small_instance
        p = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=11)
        poison = attack.build_poison_set(inst, [p], 40, seed=11)
        S = clean.concat(poison)
        h = max_margin_erm(S)
        assert binary_loss(h, S) == 0.0


class TestEvaluateAttack:
    def test_ground_truth_never_fooled(self, small_instance):
        inst, _ = small_instance
        p = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=4)
        rep = attack.evaluate_attack(LinearHypothesis(inst.w_star), inst, p,
                                     t=1, n_test=200, seed=4)
        assert rep.attack_success_rate == 0.0
        assert rep.clean_error == 0.0

    def test_constant_positive_classifier(self, small_instance):
        inst, _ = small_instance
        p = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=4)
        constant = LinearHypothesis(np.zeros(inst.d))  # sign(0) = +1 everywhere
        rep = attack.evaluate_attack(constant, inst, p, t=1, n_test=400, seed=4)
        assert rep.attack_success_rate == 1.0
        assert 0.3 <= rep.clean_error <= 0.7  # fraction of the negative class

    def test_end_to_end_attack(self, small_instance):
        inst, clean = small_instance
        p = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=8)
        poison = attack.build_poison_set(inst, [p], 40, seed=8)
        h = max_margin_erm(clean.concat(poison))
        rep = attack.evaluate_attack(h, inst, p, t=1, n_test=400, seed=8,
                                     poison_count=40)
        assert rep.clean_error <= 0.05
        assert rep.attack_success_rate >= 0.9
        assert rep.poison_count == 40


def test_suggested_poison_count():
    assert attack.suggested_poison_count(0.1, 0.05, 11) == pytest.approx(
        int(np.ceil((11 + np.log(20)) / 0.1)))
    with pytest.raises(ConfigError):
        attack.suggested_poison_count(0.0, 0.05, 11)


def test_patch_json_round_trip():
    p = PatchFunction([0.25, -1.5], -1)
    q = PatchFunction.from_json(p.to_json())
    assert np.array_equal(p.eta, q.eta)
    assert q.target_label == -1
