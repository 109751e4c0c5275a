import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmrec.data import InteractionDataset, TrainTestSplit
from mmrec.errors import ParseError, ValidationError
from mmrec.similarity import (
    FusedScorer,
    SimConfig,
    SimilarityModel,
    SimScorer,
    attention_weight,
    attention_weights,
    fuse,
    fused_score,
    init_similarity,
    load_similarity,
    save_similarity,
    score_targets,
    sim_loss_and_grad,
    sim_train,
    similarity_score,
)

from oracles import central_diff, rel_err


def random_model(rng, n=12, d=4, a=3, D=2, beta=0.5):
    return SimilarityModel(
        P=rng.normal(size=(n, d)), O=rng.normal(size=(n, d)) * 0.3, M=rng.normal(size=(D, d)),
        codes=rng.normal(size=(n, D)), A=rng.normal(size=(a, 2 * d)), z=rng.normal(size=a), beta=beta,
    )


def naive_score(m, history, target):
    Q = m.codes @ m.M + m.O
    hist = [j for j in dict.fromkeys(history) if j != target]
    if not hist:
        return 0.0
    logits = []
    for j in hist:
        x = np.concatenate((m.P[target], Q[j]))
        hidden = [max(0.0, float(m.A[r] @ x)) for r in range(m.A.shape[0])]
        logits.append(sum(zr * hr for zr, hr in zip(m.z, hidden)))
    denom = sum(math.exp(e) for e in logits) ** m.beta
    return sum(math.exp(e) / denom * float(m.P[target] @ Q[j]) for e, j in zip(logits, hist))


def test_model_invariants(rng):
    m = random_model(rng)
    with pytest.raises(ValidationError):
        SimilarityModel(m.P, m.O, m.M, m.codes, m.A, m.z, beta=0.0)
    with pytest.raises(ValidationError):
        SimilarityModel(m.P, m.O, m.M, m.codes, m.A, m.z, lam=1.5)
    with pytest.raises(ValidationError):
        SimilarityModel(m.P, m.O, m.M[:, :2], m.codes, m.A, m.z)
    with pytest.raises(ValidationError):
        SimConfig(beta=1.2)


def test_singleton_weight_is_one(rng):
    m = random_model(rng, beta=1.0)
    assert attention_weight(m, 0, 3) == pytest.approx(1.0, abs=1e-15)


def test_identical_history_items_equal_weights(rng):
    m = random_model(rng, beta=0.7)
    O = m.O.copy()
    O[[2, 5, 8]] = O[2]
    codes = m.codes.copy()
    codes[[2, 5, 8]] = codes[2]
    m = SimilarityModel(m.P, O, m.M, codes, m.A, m.z, beta=0.7)
    w = attention_weights(m, 0, [2, 5, 8])
    assert w[0] == pytest.approx(w[1], rel=1e-14) and w[1] == pytest.approx(w[2], rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 10))
def test_weights_sum_to_one_at_beta_one(seed, length):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n=15, beta=1.0)
    hist = rng.choice(np.arange(1, 15), size=length, replace=False)
    w = attention_weights(m, 0, hist)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12


def test_five_item_history_weights(rng):
    m = random_model(rng, beta=1.0)
    hist = [1, 4, 6, 7, 9]
    total = sum(attention_weight(m, 0, j, hist) for j in hist)
    assert abs(total - 1.0) <= 1e-12


def test_attention_weight_errors(rng):
    m = random_model(rng)
    with pytest.raises(ValidationError):
        attention_weight(m, 2, 2)
    with pytest.raises(ValidationError):
        attention_weight(m, 0, 3, [4, 5])
    with pytest.raises(ValidationError):
        attention_weights(m, 0, [99])


def test_empty_history_scores_zero(rng):
    assert similarity_score(random_model(rng), [], 3) == 0.0


def test_all_ones_embeddings_score_d():
    n, d = 4, 5
    m = SimilarityModel(np.ones((n, d)), np.ones((n, d)), np.zeros((0, d)), np.zeros((n, 0)),
                        np.ones((2, 2 * d)), np.ones(2), beta=1.0)
    assert similarity_score(m, [2], 0) == pytest.approx(d, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_score_matches_naive_and_is_order_free(seed, beta):
    rng = np.random.default_rng(seed)
    m = random_model(rng, beta=beta)
    hist = rng.choice(12, size=int(rng.integers(1, 8)), replace=False).tolist()
    target = int(rng.integers(12))
    s = similarity_score(m, hist, target)
    assert s == pytest.approx(naive_score(m, hist, target), rel=1e-10, abs=1e-12)
    assert similarity_score(m, hist[::-1], target) == pytest.approx(s, rel=1e-12, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_target_in_history_does_not_leak(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    hist = [1, 3, 5]
    assert similarity_score(m, hist + [7], 7) == similarity_score(m, hist, 7)
    assert similarity_score(m, [7], 7) == 0.0


def test_beta_smoothing_boosts_long_histories():
    n, d = 8, 3
    rng = np.random.default_rng(0)
    P = rng.normal(size=(n, d))
    base = dict(P=P, O=np.abs(P), M=np.zeros((0, d)), codes=np.zeros((n, 0)), A=np.ones((2, 2 * d)), z=np.zeros(2))
    for length in (2, 3, 6):
        hist = list(range(1, 1 + length))
        full = similarity_score(SimilarityModel(**base, beta=1.0), hist, 0)
        damp = similarity_score(SimilarityModel(**base, beta=0.5), hist, 0)
        assert abs(damp) > abs(full)


def test_vectorised_scoring_matches_single(rng):
    m = random_model(rng, n=30)
    hist = [2, 9, 11, 17]
    targets = np.arange(30)
    vec = score_targets(m, m.Q, hist, targets, chunk=7)
    single = [naive_score(m, hist, int(t)) for t in targets]
    assert np.allclose(vec, single, rtol=1e-10, atol=1e-12)
    assert vec[9] == pytest.approx(naive_score(m, [2, 11, 17], 9))


@pytest.mark.parametrize("l2", [0.0, 0.05])
def test_gradient_finite_differences(rng, l2):
    m = random_model(rng, n=8, d=3, a=4, D=2, beta=0.6)
    batch = [([1, 2, 5], 0, 1), ([0, 3], 4, 0), ([6], 6, 1), ([2, 7, 3, 1], 5, 0)]
    params = {k: getattr(m, k).copy() for k in ("P", "O", "M", "A", "z")}

    def f():
        mm = SimilarityModel(params["P"], params["O"], params["M"], m.codes, params["A"], params["z"], m.beta)
        return sim_loss_and_grad(mm, batch, l2)[0]

    _, grads = sim_loss_and_grad(m, batch, l2)
    for k in params:
        assert rel_err(grads[k], central_diff(f, params[k])).max() <= 1e-4, k


def test_fusion_hand_computed():
    fm = np.array([0.0, 2.0, -1.0])
    sim = np.array([1.0, -1.0, 0.5])
    sig = lambda x: 1 / (1 + math.exp(-x))
    expect = [0.5 * sig(a) + 0.5 * sig(b) for a, b in zip(fm, sim)]
    assert np.allclose(fuse(fm, sim, 0.5), expect, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.99))
def test_fusion_monotone(seed, lam):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=2) * 3
    bump = abs(rng.normal()) + 1e-3
    assert fuse(a + bump, b, lam) > fuse(a, b, lam)
    assert fuse(a, b + bump, lam) > fuse(a, b, lam)


def _toy_split():
    train = InteractionDataset.from_pairs(3, 12, [0, 0, 0, 1, 1], [1, 4, 6, 2, 9])
    return TrainTestSplit(train, np.array([0, 1]), np.array([3, 5]), 0)


def test_fused_scorer_degenerate_lambdas(rng):
    split = _toy_split()
    m = random_model(rng)
    # keep scores away from sigmoid saturation so ranks are comparable in floating point
    m = SimilarityModel(m.P * 0.3, m.O * 0.3, m.M * 0.3, m.codes, m.A, m.z * 0.3, m.beta)
    sim = SimScorer(m, split.train)
    fm_scores = rng.normal(size=12)

    def fm(user, items):
        return fm_scores[np.asarray(items)]

    items = np.array([0, 3, 5, 7, 8, 10, 11])
    for lam, ref in ((1.0, fm(0, items)), (0.0, sim(0, items))):
        fused = FusedScorer(fm, sim, lam)(0, items)
        assert np.array_equal(np.argsort(-fused, kind="stable"), np.argsort(-ref, kind="stable"))
    # cold user 2 falls back to the FM probability regardless of lambda
    assert np.allclose(FusedScorer(fm, sim, 0.0)(2, items), 1 / (1 + np.exp(-fm(2, items))))
    assert fused_score(fm, m, 2, 3, [], lam=0.0) == pytest.approx(1 / (1 + math.exp(-fm_scores[3])))
    direct = fused_score(fm, m, 0, 3, split.train.items_of(0), lam=0.3)
    assert direct == pytest.approx(FusedScorer(fm, sim, 0.3)(0, [3])[0], rel=1e-14)


def test_scorer_item_count_mismatch(rng):
    with pytest.raises(ValidationError):
        SimScorer(random_model(rng, n=5), _toy_split().train)


def test_init_grounding(rng):
    cfg = SimConfig(d=4, seed=1)
    codes = rng.normal(size=(10, 3))
    m = init_similarity(10, codes, cfg)
    assert np.all(m.O == 0) and m.M.shape == (3, 4)
    assert np.allclose(m.Q, codes @ m.M)
    free = init_similarity(10, np.zeros((10, 0)), cfg)
    assert np.any(free.O != 0)


def test_train_epochs_zero_and_determinism(small_split, small_synth):
    split, _ = small_split
    H = small_synth[2].model
    m0, h0 = sim_train(split, H, SimConfig(d=4, epochs=0, seed=3))
    ref = init_similarity(split.num_items, H.item_codes(standardize=True), SimConfig(d=4, seed=3))
    assert np.array_equal(m0.P, ref.P) and np.array_equal(m0.M, ref.M) and len(h0) == 1
    cfg = SimConfig(d=4, epochs=3, seed=3, learning_rate=0.02)
    a, ha = sim_train(split, H, cfg)
    b, hb = sim_train(split, H, cfg)
    assert ha == hb and a.P.tobytes() == b.P.tobytes() and a.A.tobytes() == b.A.tobytes()
    assert ha[-1] < ha[0]
    with pytest.raises(ValidationError):
        sim_train(split, np.zeros((3, 2)), cfg)


def test_persistence_round_trip(tmp_path, rng):
    m = random_model(rng)
    save_similarity(m, tmp_path / "sim.model", {"config_hash": "x"})
    back, meta = load_similarity(tmp_path / "sim.model", m.num_items)
    assert meta == {"config_hash": "x"}
    for k in ("P", "O", "M", "codes", "A", "z"):
        assert np.array_equal(getattr(back, k), getattr(m, k))
    assert back.beta == m.beta and back.lam == m.lam
    with pytest.raises(ValidationError):
        load_similarity(tmp_path / "sim.model", m.num_items + 1)
    free = SimilarityModel(m.P, m.O, np.zeros((0, 4)), np.zeros((12, 0)), m.A, m.z)
    save_similarity(free, tmp_path / "free.model")
    assert load_similarity(tmp_path / "free.model")[0].codes.shape == (12, 0)
    (tmp_path / "bad.model").write_text("garbage\n")
    with pytest.raises(ParseError):
        load_similarity(tmp_path / "bad.model")
