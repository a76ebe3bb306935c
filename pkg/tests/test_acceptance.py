"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (run pytest with -s to stream them)
and enforces its thresholds with plain asserts.  The image trial runs
on a synthetic 10-class digit stand-in written through the IDX file
layer at the 10k-image scale.
"""

import itertools
import time

import numpy as np
import pytest

from backdoorlab import attack, defense, mcap, mnistio, trial
from backdoorlab.core import (LinearHypothesis, NormKind, PerturbationSet,
                              binary_loss, robust_loss)
from backdoorlab.defense import Verdict
from backdoorlab.learner import (PgdConfig, SoftmaxModel, TrainConfig,
                                 max_margin_erm, norm_constrained_margin_erm,
                                 robust_erm_halfspace)
from backdoorlab.rng import generator
from backdoorlab.synth import sample_instance, sample_labeled
from conftest import digit_images, write_idx_pair
from test_core import oracle_robust_loss

GAMMA = 0.1
RADIUS = 0.075          # in-margin certification ball
IN_MARGIN_MAG = 0.05    # in-margin patch magnitude (< gamma)
P_CERT = PerturbationSet(NormKind.L2, RADIUS)


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})",
          flush=True)


def criterion_instance(seed: int, alpha: float = 0.0, magnitude: float = 1.0,
                       n_clean: int = 2000, t: int = 1):
    inst, clean = sample_instance(d=50, s=5, gamma=GAMMA, R=1.0, n=n_clean,
                                  balance_target=0.5, seed=seed)
    if alpha == 0.0:
        return inst, None, clean, clean
    k = int(np.ceil(alpha * n_clean / (1.0 - alpha)))
    patch = attack.orthogonal_patch(inst, t=t, magnitude=magnitude, seed=seed)
    poison = attack.build_poison_set(inst, [patch], k, seed)
    return inst, patch, clean, clean.concat(poison)


def test_criterion_1_synthetic_attack_success():
    start = time.time()
    wins = 0
    for seed in range(20):
        inst, clean = sample_instance(d=50, s=5, gamma=GAMMA, R=1.0, n=2000,
                                      balance_target=0.5, seed=seed)
        patch = attack.orthogonal_patch(inst, t=1, magnitude=1.0, seed=seed)
        poison = attack.build_poison_set(inst, [patch], 200, seed)
        h = max_margin_erm(clean.concat(poison))
        rep = attack.evaluate_attack(h, inst, patch, t=1, n_test=1000,
                                     seed=seed, poison_count=200)
        wins += (rep.clean_error <= 0.05 and rep.attack_success_rate >= 0.90)
    elapsed = time.time() - start
    ok = wins >= 19 and elapsed <= 60.0
    report(1, "synthetic-attack-success", ok, f"{wins}/20 wins, {elapsed:.1f}s")
    assert wins >= 19
    assert elapsed <= 60.0


def test_criterion_2_random_watermark():
    start = time.time()
    required = attack.required_watermark_dim(10, GAMMA, 0.05, 1.0)
    inst, _ = sample_instance(d=8000, s=10, gamma=GAMMA, R=1.0, n=2,
                              balance_target=0.5, seed=1)
    hits = 0
    for seed in range(200):
        patch, req = attack.random_watermark(inst, delta=0.05, C0=1.0, seed=seed)
        assert req == required
        hits += np.linalg.norm(inst.A.T @ patch.eta) <= GAMMA
    freq = hits / 200.0

    successes = 0
    for seed in range(10):
        inst, clean = sample_instance(d=8000, s=10, gamma=GAMMA, R=1.0, n=1000,
                                      balance_target=0.5, seed=seed)
        patch, _ = attack.random_watermark(inst, delta=0.05, C0=1.0, seed=seed)
        poison = attack.build_poison_set(inst, [patch], 200, seed,
                                         consistency_tol=GAMMA)
        h = max_margin_erm(clean.concat(poison), tol=1e-3)
        rep = attack.evaluate_attack(h, inst, patch, t=1, n_test=500, seed=seed)
        successes += rep.attack_success_rate >= 0.85
    elapsed = time.time() - start
    ok = required == 6685 and freq >= 0.95 and successes == 10 and elapsed <= 300
    report(2, "random-watermark", ok,
           f"dim={required}, freq={freq:.3f}, attacks={successes}/10, {elapsed:.1f}s")
    assert required == 6685
    assert freq >= 0.95
    assert successes == 10
    assert elapsed <= 300.0


def test_criterion_3_margin_detection():
    clean_zero = 0
    poisoned_nonzero = 0
    for seed in range(20):
        _, _, clean, poisoned = criterion_instance(seed, alpha=0.15,
                                                   magnitude=0.09)
        _, loss_clean = norm_constrained_margin_erm(clean, 1.0 / GAMMA, seed=seed)
        _, loss_poisoned = norm_constrained_margin_erm(poisoned, 1.0 / GAMMA,
                                                       seed=seed)
        clean_zero += loss_clean == 0.0
        poisoned_nonzero += loss_poisoned > 0.0
    ok = clean_zero == 20 and poisoned_nonzero == 20
    report(3, "norm-margin-detection", ok,
           f"clean zeros {clean_zero}/20, poisoned nonzeros {poisoned_nonzero}/20")
    assert clean_zero == 20
    assert poisoned_nonzero == 20


def test_criterion_4_certification():
    clean_ok = 0
    reject_03 = 0
    reject_rate = {}
    for alpha in (0.0, 0.1, 0.2, 0.3):
        rejects = 0
        for seed in range(20):
            _, _, _, S = criterion_instance(seed, alpha=alpha,
                                            magnitude=IN_MARGIN_MAG)
            out = defense.certify(S, P_CERT, epsilon=0.05, seed=seed)
            if alpha == 0.0:
                clean_ok += (out.verdict is Verdict.ACCEPT
                             and out.training_robust_loss == 0.0)
            rejects += out.verdict is Verdict.REJECT
        reject_rate[alpha] = rejects / 20.0
    reject_03 = int(round(reject_rate[0.3] * 20))
    rates = [reject_rate[a] for a in (0.0, 0.1, 0.2, 0.3)]
    monotone = all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))
    ok = clean_ok == 20 and reject_03 == 20 and monotone
    report(4, "certification", ok,
           f"clean accepts {clean_ok}/20, rejects@0.3 {reject_03}/20, "
           f"rates={rates}")
    assert clean_ok == 20
    assert reject_03 == 20
    assert monotone


def test_criterion_5_filtering_equivalence():
    kept_clean_fracs, kept_poison_fracs, test_losses = [], [], []
    for seed in range(20):
        inst, _, _, S = criterion_instance(seed, alpha=0.15,
                                           magnitude=IN_MARGIN_MAG)
        gen = lambda D: robust_erm_halfspace(D, P_CERT, seed=seed)
        out = defense.generalize_to_filter(S, P_CERT, gen, epsilon=0.05,
                                           seed=seed)
        n_poison = int(S.is_poison.sum())
        n_clean = len(S) - n_poison
        kept_clean_fracs.append((n_clean - out.removed_clean_count) / n_clean)
        kept_poison_fracs.append((n_poison - out.removed_poison_count) / n_poison)
        h = defense.filter_then_generalize(S, P_CERT, lambda _: out.kept,
                                           seed=seed)
        test = sample_labeled(inst, 1000, generator(seed, 12345))
        test_losses.append(robust_loss(h, test, P_CERT))
    med_clean = float(np.median(kept_clean_fracs))
    med_poison = float(np.median(kept_poison_fracs))
    med_loss = float(np.median(test_losses))

    inst, _, _, S = criterion_instance(7, alpha=0.15, magnitude=IN_MARGIN_MAG)
    oracle = lambda D: LinearHypothesis(inst.w_star)
    o = defense.generalize_to_filter(S, P_CERT, oracle, epsilon=0.05, seed=7)
    oracle_exact = (o.removed_poison_count == int(S.is_poison.sum())
                    and o.removed_clean_count == 0)

    ok = (med_clean >= 0.95 and med_poison <= 0.10 and med_loss <= 0.10
          and oracle_exact)
    report(5, "filter-generalize", ok,
           f"median clean kept {med_clean:.3f}, poison kept {med_poison:.3f}, "
           f"robust test loss {med_loss:.3f}, oracle exact {oracle_exact}")
    assert med_clean >= 0.95
    assert med_poison <= 0.10
    assert med_loss <= 0.10
    assert oracle_exact


def test_criterion_6_memorization_capacity():
    start = time.time()
    # constant class on {0,1}^2: no spare capacity
    pts = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    constant = mcap.FiniteProblem(pts, np.full(4, 0.25),
                                  np.array([[1, 1, 1, 1]]), 0)
    k0, _ = mcap.brute_force_mcap(constant, 4)

    # point mass at the origin with halfspace labelings: full capacity d
    d = 3
    basis_pts = np.vstack([np.zeros(d), np.eye(d)])
    rows = sorted({(1,) + s for s in itertools.product((-1, 1), repeat=d)})
    labels = np.array(rows)
    h_star = int(np.flatnonzero((labels == 1).all(axis=1))[0])
    mass = np.zeros(d + 1)
    mass[0] = 1.0
    halfspaces = mcap.FiniteProblem(basis_pts, mass, labels, h_star)
    k1, wit1 = mcap.brute_force_mcap(halfspaces, d + 1)
    vc1 = mcap.brute_force_vc(halfspaces)

    bound_ok = 0
    for seed in range(100):
        g = np.random.default_rng(seed)
        n = int(g.integers(2, 9))
        m = int(g.integers(1, 65))
        lab = np.unique(g.choice([-1, 1], size=(m, n)), axis=0)
        mass_vec = g.random(n) * (g.random(n) < 0.6)
        total = mass_vec.sum()
        mass_vec = mass_vec / total if total > 0 else np.full(n, 1.0 / n)
        prob = mcap.FiniteProblem(np.arange(n, dtype=float)[:, None], mass_vec,
                                  lab, int(g.integers(0, lab.shape[0])))
        k, w = mcap.brute_force_mcap(prob, n)
        valid = w is None or mcap.verify_mcap_witness(prob, w)
        bound_ok += (0 <= k <= mcap.brute_force_vc(prob)) and valid

    sign_ok = 0
    for dd, ss in ((4, 0), (6, 2), (7, 3)):
        h = mcap.PiecewiseSign.alternating(ss)
        kk = (dd - ss) // 2
        pieces = h.pieces
        pts_ = [pieces[i % len(pieces)][0]
                + (i + 1) / (kk + 1) * (pieces[i % len(pieces)][1]
                                        - pieces[i % len(pieces)][0])
                for i in range(kk)]
        w = mcap.sign_changes_mcap_witness(dd, ss, h, pts_)
        sign_ok += (w.k == kk) and mcap.verify_sign_witness(dd, h, w)

    inst, _ = sample_instance(d=6, s=4, gamma=GAMMA, R=1.0, n=10,
                              balance_target=0.5, seed=3)
    lw = mcap.linear_overparam_witness(inst, [1, -1], [1.0, 1.0])
    fresh = sample_labeled(inst, 500, generator(606))
    linear_ok = binary_loss(lw.w_hat, fresh) == 0.0
    for p in lw.patches:
        linear_ok &= bool(
            (lw.w_hat.predict_many(p.apply_many(fresh.X)) == p.target_label).all())

    elapsed = time.time() - start
    ok = (k0 == 0 and k1 == 3 and vc1 == 3
          and mcap.verify_mcap_witness(halfspaces, wit1)
          and bound_ok == 100 and sign_ok == 3 and linear_ok
          and elapsed <= 120.0)
    report(6, "memorization-capacity", ok,
           f"constant mcap {k0}, halfspace mcap {k1}=vc {vc1}, bound {bound_ok}/100, "
           f"sign {sign_ok}/3, linear {linear_ok}, {elapsed:.1f}s")
    assert k0 == 0
    assert k1 == 3 and vc1 == 3
    assert bound_ok == 100
    assert sign_ok == 3
    assert linear_ok
    assert elapsed <= 120.0


@pytest.fixture(scope="module")
def image_trial_rows(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("idx")
    train = digit_images(10_000, seed=21)
    test = digit_images(2_000, seed=22)
    write_idx_pair(train, tmp / "train-images.idx", tmp / "train-labels.idx")
    write_idx_pair(test, tmp / "test-images.idx", tmp / "test-labels.idx")
    train = mnistio.load_image_dataset(tmp / "train-images.idx",
                                       tmp / "train-labels.idx")
    test = mnistio.load_image_dataset(tmp / "test-images.idx",
                                      tmp / "test-labels.idx")
    cfg = TrainConfig(
        epochs=2, batch_size=32, step_size=1.0, seed=77,
        pgd=PgdConfig(epsilon=0.3, step_size=0.01, iterations=40, restarts=10))
    start = time.time()
    rows = trial.run_trial(train, test, t=0,
                           alphas=[0.0, 0.05, 0.15, 0.20, 0.30], cfg=cfg,
                           robust_sample_size=5000, seed=77)
    return rows, time.time() - start


def test_criterion_7_image_trial_trends(image_trial_rows):
    rows, elapsed = image_trial_rows
    by_cell = {(r.alpha, r.regime): r for r in rows}
    vanilla = {a: by_cell[(a, trial.Regime.VANILLA)]
               for a in (0.0, 0.05, 0.15, 0.20, 0.30)}
    pgd_at = {a: by_cell[(a, trial.Regime.PGD_AT)]
              for a in (0.0, 0.05, 0.15, 0.20, 0.30)}

    a_ok = all(vanilla[a].backdoor_success_rate >= 0.95
               for a in (0.05, 0.15, 0.20, 0.30))
    b_ok = vanilla[0.0].backdoor_success_rate <= 0.10
    c_ok = all(pgd_at[a].backdoor_success_rate <= 0.15
               for a in (0.0, 0.05, 0.15, 0.20))
    d_ok = pgd_at[0.30].train_robust_loss >= 2.0 * pgd_at[0.0].train_robust_loss
    e_ok = all(r.train_robust_loss >= r.train_binary_loss
               and r.test_robust_loss >= r.test_binary_loss for r in rows)
    trend = [pgd_at[a].train_robust_loss for a in (0.0, 0.05, 0.15, 0.20, 0.30)]
    trend_ok = all(x <= y + 0.05 for x, y in zip(trend, trend[1:]))

    ok = a_ok and b_ok and c_ok and d_ok and e_ok and trend_ok
    report(7, "image-trial-trends", ok,
           f"vanilla bd={[round(vanilla[a].backdoor_success_rate, 3) for a in (0.0, 0.05, 0.15, 0.20, 0.30)]}, "
           f"pgd-at bd={[round(pgd_at[a].backdoor_success_rate, 3) for a in (0.0, 0.05, 0.15, 0.20, 0.30)]}, "
           f"pgd-at trainRobust={[round(x, 3) for x in trend]}, {elapsed:.0f}s")
    assert a_ok, "vanilla backdoor success must be >= 0.95 for alpha >= 0.05"
    assert b_ok, "vanilla backdoor success must be <= 0.10 at alpha 0"
    assert c_ok, "pgd-at backdoor success must be <= 0.15 for alpha <= 0.20"
    assert d_ok, "pgd-at robust train loss must double from alpha 0 to 0.30"
    assert e_ok, "robust loss must dominate binary loss per row"
    assert trend_ok, "pgd-at robust train loss must be nondecreasing in alpha"
    assert elapsed <= 1800.0


def test_criterion_8_numerical_hygiene():
    # softmax gradient against central finite differences
    g = np.random.default_rng(404)
    model = SoftmaxModel(g.standard_normal((6, 9)), g.standard_normal(6))
    X = g.random((12, 9))
    y = g.integers(0, 6, 12)
    _, gW, gb = model.loss_and_grad(X, y)
    eps = 1e-5
    grad_ok = 0
    for _ in range(10):
        i, j = int(g.integers(0, 6)), int(g.integers(0, 9))
        Wp, Wm = model.W.copy(), model.W.copy()
        Wp[i, j] += eps
        Wm[i, j] -= eps
        num = (SoftmaxModel(Wp, model.b).cross_entropy(X, y)
               - SoftmaxModel(Wm, model.b).cross_entropy(X, y)) / (2 * eps)
        grad_ok += abs(num - gW[i, j]) <= 1e-4 * max(1.0, abs(num))

    oracle_ok = 0
    from backdoorlab.core import LabeledDataset
    for seed in range(50):
        gg = np.random.default_rng(1000 + seed)
        d = int(gg.integers(1, 4))
        n = int(gg.integers(1, 9))
        S = LabeledDataset(gg.standard_normal((n, d)), gg.choice([-1, 1], n),
                           np.zeros(n, dtype=bool))
        h = LinearHypothesis(gg.standard_normal(d))
        kind = NormKind.L2 if gg.random() < 0.5 else NormKind.LINF
        P = PerturbationSet(kind, float(gg.choice([0.0, 0.25, 0.5, 1.0])))
        exact = robust_loss(h, S, P)
        approx = oracle_robust_loss(h, S, P)
        good = approx <= exact + 1e-12
        deficits = np.abs(S.y * (S.X @ h.w) - P.radius * P.dual_norm(h.w))
        if np.all(deficits > 1e-2 * max(1.0, float(np.linalg.norm(h.w)))):
            good = good and (approx == exact)
        oracle_ok += good

    import struct
    raw = (bytes([0, 0, 8, 3]) + struct.pack(">3I", 2, 2, 2)
           + bytes(range(8)))
    dims, payload = mnistio.parse_idx(raw)
    idx_ok = mnistio.serialize_idx(dims, payload) == raw

    ok = grad_ok == 10 and oracle_ok == 50 and idx_ok
    report(8, "numerical-hygiene", ok,
           f"gradient {grad_ok}/10, robust-loss oracle {oracle_ok}/50, idx round-trip {idx_ok}")
    assert grad_ok == 10
    assert oracle_ok == 50
    assert idx_ok
