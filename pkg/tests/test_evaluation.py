import numpy as np
import pytest

from sleepgeom import evaluation as ev
from sleepgeom.errors import DataError


def oracle_metrics(M):
    M = np.asarray(M, dtype=float)
    n = M.sum()
    acc = np.trace(M) / n
    ea = sum(M[i].sum() * M[:, i].sum() for i in range(len(M))) / n**2
    f1 = []
    for i in range(len(M)):
        tp, fp, fn = M[i, i], M[:, i].sum() - M[i, i], M[i].sum() - M[i, i]
        f1.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else np.nan)
    return acc, ea, (acc - ea) / (1 - ea), np.nanmean(f1)


def test_identity_confusion_is_perfect():
    m = ev.metrics(np.eye(5, dtype=int) * 7)
    assert m.accuracy == 1 and m.kappa == 1 and m.macro_f1 == 1
    np.testing.assert_array_equal(m.recall, 1)


def test_metrics_match_oracle(rng):
    for _ in range(20):
        M = rng.integers(0, 50, (5, 5))
        m = ev.metrics(M)
        acc, ea, kappa, mf1 = oracle_metrics(M)
        assert m.accuracy == pytest.approx(acc, rel=1e-12)
        assert m.expected_accuracy == pytest.approx(ea, rel=1e-12)
        assert m.kappa == pytest.approx(kappa, rel=1e-12)
        assert m.macro_f1 == pytest.approx(mf1, rel=1e-12)


def test_undefined_class_is_nan_and_excluded():
    M = np.diag([5, 5, 0, 5, 5])
    m = ev.metrics(M)
    assert np.isnan(m.f1[2]) and m.macro_f1 == 1.0
    d = m.to_dict()
    assert d["per_class"]["N1"]["f1"] is None


def test_predicted_but_absent_class_scores_zero():
    M = np.zeros((5, 5), int)
    M[0, 0], M[0, 2] = 4, 1
    m = ev.metrics(M)
    assert m.f1[2] == 0 and m.precision[2] == 0
    assert np.isnan(m.f1[1])


def test_confusion_from_sequences():
    cm = ev.confusion([1, 2, 2, 5], [1, 2, 3, 5])
    assert cm.total == 4 and cm.M[1, 2] == 1 and cm.M[4, 4] == 1
    with pytest.raises(DataError):
        ev.confusion([1, 2], [1])
    with pytest.raises(DataError):
        ev.confusion([0], [1])
    with pytest.raises(DataError):
        ev.metrics(np.zeros((5, 5)))


def subjects(ages, nights=1, n=20, seed=0):
    r = np.random.default_rng(seed)
    out = []
    for i, a in enumerate(ages):
        ns = []
        for k in range(nights):
            st = r.integers(1, 6, n)
            ns.append(ev.Night(f"s{i:02d}n{k}", st, {"x": st[:, None].astype(float)}))
        out.append(ev.SubjectRecord(f"s{i:02d}", a, ns))
    return out


def test_select_training_subjects_by_age_with_id_ties():
    subs = subjects([30, 35, 25, 50, 31])
    test = subs[0]
    sel = ev.select_training_subjects(subs, test, 3)
    assert [s.id for s in sel] == ["s04", "s01", "s02"]
    with pytest.raises(DataError):
        ev.select_training_subjects(subs, test, 5)


def test_class_balance_examples(rng):
    st = np.array([1] * 10 + [2] * 3 + [3] * 5 + [4] * 4 + [5] * 7)
    idx = ev.class_balance(st, rng)
    assert np.all(np.bincount(st[idx], minlength=6)[1:] == 3)
    assert np.all(np.diff(idx) > 0)
    st2 = np.array([1, 1, 1, 2, 2])
    idx2 = ev.class_balance(st2, rng)
    assert np.bincount(st2[idx2]).tolist() == [0, 2, 2]
    assert ev.class_balance([], rng).size == 0


def test_class_balance_is_seed_reproducible():
    st = np.repeat([1, 2, 3, 4, 5], [9, 4, 6, 8, 5])
    a = ev.class_balance(st, ev.subject_rng(3, "sub"))
    b = ev.class_balance(st, ev.subject_rng(3, "sub"))
    np.testing.assert_array_equal(a, b)


def oracle_runner(train, test, rng):
    return [n.stages.copy() for n in test.nights]


def majority_runner(train, test, rng):
    allst = np.concatenate([n.stages for s in train for n in s.nights])
    mode = np.bincount(allst).argmax()
    return [np.full(len(n), mode) for n in test.nights]


def test_losocv_toy_with_single_neighbour():
    subs = subjects([20, 40, 60], n=10)
    seen = []

    def runner(train, test, rng):
        seen.append((test.id, [s.id for s in train]))
        return oracle_runner(train, test, rng)

    rep = ev.losocv(subs, runner, k_hat=1)
    assert seen == [("s00", ["s01"]), ("s01", ["s00"]), ("s02", ["s01"])]
    assert rep.pooled.total == 30
    assert rep.pooled_metrics.accuracy == 1.0


def test_losocv_never_trains_on_test_subject():
    subs = subjects([20, 21, 22, 23, 24, 25])

    def runner(train, test, rng):
        assert test.id not in {s.id for s in train}
        assert len(train) == 4
        return majority_runner(train, test, rng)

    rep = ev.losocv(subs, runner, k_hat=4)
    for f in rep.folds:
        assert not set(f.test_subjects) & set(f.train_subjects)


def test_losocv_deterministic_under_seed():
    subs = subjects([20, 30, 40, 50], nights=2)

    def runner(train, test, rng):
        return [rng.integers(1, 6, len(n)) for n in test.nights]

    a = ev.losocv(subs, runner, k_hat=2, seed=9).to_dict()
    b = ev.losocv(list(reversed(subs)), runner, k_hat=2, seed=9).to_dict()
    assert a["pooled"] == b["pooled"]
    assert a["seed"] == 9


def test_kfold_with_one_subject_per_fold_equals_losocv():
    subs = subjects([22, 33, 44, 55, 66])
    a = ev.kfold(subs, majority_runner, folds=5, k_hat=2)
    b = ev.losocv(subs, majority_runner, k_hat=2)
    np.testing.assert_array_equal(a.pooled.M, b.pooled.M)


def test_kfold_groups_partition_subjects():
    subs = subjects([20 + i for i in range(10)])
    rep = ev.kfold(subs, oracle_runner, folds=3, k_hat=3, seed=1)
    tested = sorted(t for f in rep.folds for t in f.test_subjects)
    assert tested == sorted(s.id for s in subs)
    for f in rep.folds:
        assert not set(f.test_subjects) & set(f.train_subjects)


def test_cv_rejects_small_pools():
    subs = subjects([20, 30])
    with pytest.raises(DataError):
        ev.losocv(subs, oracle_runner, k_hat=2)
    with pytest.raises(DataError):
        ev.kfold(subs, oracle_runner, folds=3, k_hat=1)


def test_runner_prediction_count_checked():
    subs = subjects([20, 30], nights=2)
    with pytest.raises(DataError):
        ev.losocv(subs, lambda tr, te, r: [te.nights[0].stages], k_hat=1)


def test_report_per_night_summary():
    subs = subjects([20, 30, 40], nights=2)
    rep = ev.losocv(subs, oracle_runner, k_hat=1)
    pn = rep.per_night()
    assert pn["accuracy"] == {"mean": 1.0, "sd": 0.0, "n": 6}


def test_subject_age_must_be_positive():
    with pytest.raises(DataError):
        ev.SubjectRecord("x", 0)
