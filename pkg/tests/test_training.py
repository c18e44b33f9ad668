import csv
import math

import numpy as np
import pytest

from fairtensor.errors import ConfigurationError, TrainingDivergedError
from fairtensor.models import CPModel, init_model
from fairtensor.sparse import SensitiveContext, SparseTensor
from fairtensor.training import (
    Adam,
    TrainConfig,
    TrainReport,
    loss_plain,
    penalty_coupling,
    penalty_made,
    penalty_madr,
    train,
)


def full_grid_tensor(truth, dims):
    idx = np.array(
        [(i, j, k) for i in range(dims[0]) for j in range(dims[1])
         for k in range(dims[2])]
    )
    values = truth.predict_rows(truth.gather_rows(idx))
    return SparseTensor(dims=dims, indices=idx, values=values)


def prediction_model(values):
    """Rank-1 CP model with predict((i, 0)) == values[i]."""
    col = np.asarray(values, dtype=np.float64)[:, None]
    return CPModel([col, np.ones((1, 1))])


class TestTrainConfig:
    def test_defaults_valid(self):
        TrainConfig().validate()

    @pytest.mark.parametrize("field,value", [
        ("rank", 0),
        ("batch_size", 0),
        ("learning_rate", 0.0),
        ("weight_decay", -0.1),
        ("fairness_coeff", -1.0),
        ("max_epochs", 0),
        ("objective", "ridge"),
    ])
    def test_rejects_bad_fields(self, field, value):
        cfg = TrainConfig(**{field: value})
        with pytest.raises(ConfigurationError):
            cfg.validate()


class TestAdam:
    def test_first_step_magnitude_is_learning_rate(self):
        p = np.array([1.0])
        opt = Adam([p], learning_rate=0.01)
        opt.step([p], [np.array([3.7])])
        # bias-corrected first step: lr * g / (|g| + eps) ~ lr * sign(g)
        assert abs(p[0] - 1.0) == pytest.approx(0.01, rel=1e-6)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(0)
        p = rng.standard_normal(4)
        q = rng.standard_normal((2, 3))
        params = [p.copy(), q.copy()]
        opt = Adam(params, learning_rate=0.05)

        # straightforward scalar-transcription of the update rule
        ref = [p.copy(), q.copy()]
        m = [np.zeros_like(a) for a in ref]
        v = [np.zeros_like(a) for a in ref]
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, 11):
            grads = [rng.standard_normal(a.shape) for a in ref]
            opt.step(params, grads)
            for a, g, mm, vv in zip(ref, grads, m, v):
                mm[...] = b1 * mm + (1 - b1) * g
                vv[...] = b2 * vv + (1 - b2) * g * g
                mhat = mm / (1 - b1 ** t)
                vhat = vv / (1 - b2 ** t)
                a -= 0.05 * mhat / (np.sqrt(vhat) + eps)
        for got, want in zip(params, ref):
            assert np.allclose(got, want, rtol=0, atol=1e-15)


class TestLossPlain:
    def test_perfect_model_zero_data_term(self):
        truth = init_model("cp", (3, 3, 3), 2, seed=4)
        t = full_grid_tensor(truth, (3, 3, 3))
        assert loss_plain(truth, t.indices, t.values) == pytest.approx(
            0.0, abs=1e-20
        )

    def test_single_entry_hand_value(self):
        model = prediction_model([3.0])
        # x = 1, reconstruction 3 -> (1 - 3)^2 = 4
        assert loss_plain(model, [(0, 0)], [1.0]) == pytest.approx(4.0)

    def test_matches_naive_loop(self):
        model = init_model("cp", (4, 5), 3, seed=1)
        rng = np.random.default_rng(2)
        idx = np.stack([rng.integers(0, d, 30) for d in (4, 5)], axis=1)
        vals = rng.standard_normal(30)
        naive = sum(
            (float(v) - model.predict(tuple(row))) ** 2
            for row, v in zip(idx, vals)
        )
        assert loss_plain(model, idx, vals) == pytest.approx(
            naive, rel=1e-12
        )

    def test_l2_term_scaling(self):
        model = init_model("cp", (3, 3), 2, seed=0)
        base = loss_plain(model, [(0, 0)], [0.0])
        sq = sum(float((p ** 2).sum()) for p in model.parameters())
        full = loss_plain(model, [(0, 0)], [0.0], weight_decay=0.5,
                          reg_fraction=0.25)
        assert full == pytest.approx(base + 0.5 * 0.25 * sq, rel=1e-12)

    def test_empty_batch_rejected(self):
        model = init_model("cp", (3, 3), 2, seed=0)
        with pytest.raises(ValueError):
            loss_plain(model, np.empty((0, 2), dtype=int), [])


class TestPenalties:
    def test_madr_hand_case(self):
        # group1 reconstructions {2, -2}, group2 {1} -> |2 - 1| = 1
        model = prediction_model([2.0, -2.0, 1.0])
        ctx = SensitiveContext.from_labels(0, ["g1", "g1", "g2"])
        idx = np.array([[0, 0], [1, 0], [2, 0]])
        value, _ = penalty_madr(model, idx, ctx)
        assert value == pytest.approx(1.0)

    def test_madr_symmetric_case_zero(self):
        model = prediction_model([1.5, 1.5, 1.5])
        ctx = SensitiveContext.from_labels(0, ["a", "a", "b"])
        idx = np.array([[0, 0], [1, 0], [2, 0]])
        value, grads = penalty_madr(model, idx, ctx)
        assert value == 0.0

    def test_madr_single_group_batch_is_zero(self):
        model = prediction_model([2.0, 3.0, 1.0])
        ctx = SensitiveContext.from_labels(0, ["a", "a", "b"])
        idx = np.array([[0, 0], [1, 0]])  # only group a
        value, grads = penalty_madr(model, idx, ctx)
        assert value == 0.0
        assert all(np.all(g == 0) for g in grads)

    def test_made_hand_cases(self):
        # abs errors g1 {1,3}, g2 {2} -> |2 - 2| = 0
        model = prediction_model([1.0, 3.0, 2.0])
        ctx = SensitiveContext.from_labels(0, ["g1", "g1", "g2"])
        idx = np.array([[0, 0], [1, 0], [2, 0]])
        value, _ = penalty_made(model, idx, np.zeros(3), ctx)
        assert value == pytest.approx(0.0)
        # abs errors g1 {1}, g2 {4} -> 3
        model = prediction_model([1.0, 4.0])
        ctx = SensitiveContext.from_labels(0, ["g1", "g2"])
        idx = np.array([[0, 0], [1, 0]])
        value, _ = penalty_made(model, idx, np.zeros(2), ctx)
        assert value == pytest.approx(3.0)

    def test_made_perfect_reconstruction_zero(self):
        model = prediction_model([1.0, 2.0])
        ctx = SensitiveContext.from_labels(0, ["g1", "g2"])
        idx = np.array([[0, 0], [1, 0]])
        value, grads = penalty_made(
            model, idx, np.array([1.0, 2.0]), ctx
        )
        assert value == 0.0
        # sign(0) = 0 convention: gradient vanishes at the kink
        assert all(np.all(g == 0) for g in grads)

    def test_coupling_hand_cases(self):
        model = CPModel([
            np.array([[1.0, 0.0], [0.0, 1.0], [3.0, 3.0], [3.0, 3.0]]),
            np.ones((1, 2)),
        ])
        value, grad = penalty_coupling(model, [(2, 3)], 1.0, 0)
        assert value == 0.0
        assert np.all(grad == 0)
        value, grad = penalty_coupling(model, [(0, 1)], 1.0, 0)
        assert value == pytest.approx(2.0)
        assert np.allclose(grad[0], [2.0, -2.0])
        assert np.allclose(grad[1], [-2.0, 2.0])

    def test_coupling_scales_with_coefficient(self):
        model = CPModel([np.array([[1.0], [4.0]]), np.ones((1, 1))])
        value, grad = penalty_coupling(model, [(0, 1)], 0.25, 0)
        assert value == pytest.approx(0.25 * 9.0)
        assert grad[0, 0] == pytest.approx(2 * 0.25 * -3.0)

    def test_coupling_out_of_bounds_pair(self):
        model = init_model("cp", (3, 3), 2, seed=0)
        with pytest.raises(ConfigurationError, match="out of bounds"):
            penalty_coupling(model, [(0, 7)], 1.0, 0)


def make_recovery_problem(seed=5):
    truth = init_model("cp", (3, 3, 3), 1, scale=1.0, seed=seed)
    tensor = full_grid_tensor(truth, (3, 3, 3))
    perm = np.random.default_rng(seed).permutation(tensor.nnz)
    train_t = tensor.select(np.isin(np.arange(tensor.nnz), perm[:21]))
    val_t = tensor.select(np.isin(np.arange(tensor.nnz), perm[21:]))
    return train_t, val_t


class TestTrain:
    def test_rank_one_recovery(self):
        train_t, val_t = make_recovery_problem()
        model = init_model("cp", (3, 3, 3), 1, scale=0.5, seed=1)
        cfg = TrainConfig(rank=1, batch_size=8, learning_rate=0.05,
                          max_epochs=500, patience=500, seed=1)
        report = train(model, train_t, val_t, None, cfg)
        assert min(report.val_mse) < 1e-3

    def test_best_epoch_is_argmin_and_model_restored(self):
        train_t, val_t = make_recovery_problem()
        model = init_model("cp", (3, 3, 3), 1, scale=0.5, seed=2)
        cfg = TrainConfig(rank=1, batch_size=8, learning_rate=0.1,
                          max_epochs=60, patience=60, seed=2)
        report = train(model, train_t, val_t, None, cfg)
        assert report.best_epoch == int(np.argmin(report.val_mse))
        preds = model.predict(val_t.indices)
        restored = float(((preds - val_t.values) ** 2).mean())
        assert restored == pytest.approx(
            report.val_mse[report.best_epoch], rel=0, abs=0
        )

    def test_early_stopping_cuts_epochs(self):
        rng = np.random.default_rng(3)
        idx = np.array([(i, j) for i in range(6) for j in range(6)])
        t = SparseTensor((6, 6), idx, rng.standard_normal(len(idx)))
        train_t = t.select(np.arange(t.nnz) < 28)
        val_t = t.select(np.arange(t.nnz) >= 28)
        model = init_model("cp", (6, 6), 4, scale=0.5, seed=3)
        cfg = TrainConfig(rank=4, batch_size=8, learning_rate=0.1,
                          max_epochs=400, patience=3, seed=3)
        report = train(model, train_t, val_t, None, cfg)
        assert report.n_epochs < 400
        assert report.val_mse[report.best_epoch] == min(report.val_mse)

    def test_deterministic(self):
        train_t, val_t = make_recovery_problem()
        outs = []
        for _ in range(2):
            model = init_model("cp", (3, 3, 3), 1, scale=0.5, seed=7)
            cfg = TrainConfig(rank=1, batch_size=4, learning_rate=0.05,
                              max_epochs=20, patience=20, seed=7)
            report = train(model, train_t, val_t, None, cfg)
            outs.append((report, model))
        r1, m1 = outs[0]
        r2, m2 = outs[1]
        assert r1.train_loss == r2.train_loss
        assert r1.val_mse == r2.val_mse
        for a, b in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(a, b)

    def test_objective_consistency_with_zero_coefficients(self):
        train_t, val_t = make_recovery_problem()
        ctx = SensitiveContext.from_labels(0, ["a", "b", "a"])
        finals = []
        for objective in ("plain", "madr_penalty", "made_penalty", "staff"):
            model = init_model("cp", (3, 3, 3), 1, scale=0.5, seed=4)
            cfg = TrainConfig(rank=1, batch_size=8, learning_rate=0.05,
                              max_epochs=15, patience=15, seed=4,
                              objective=objective, fairness_coeff=0.0)
            coupling = (np.empty((0, 2), dtype=np.int64)
                        if objective == "staff" else None)
            train(model, train_t, val_t, ctx, cfg, coupling=coupling)
            finals.append([p.copy() for p in model.parameters()])
        for other in finals[1:]:
            for a, b in zip(finals[0], other):
                assert np.array_equal(a, b)

    def test_fairness_objectives_run_and_record_val_made(self):
        train_t, val_t = make_recovery_problem()
        ctx = SensitiveContext.from_labels(0, ["a", "b", "a"])
        for objective in ("madr_penalty", "made_penalty"):
            model = init_model("cp", (3, 3, 3), 1, scale=0.5, seed=6)
            cfg = TrainConfig(rank=1, batch_size=8, learning_rate=0.05,
                              max_epochs=10, patience=10, seed=6,
                              objective=objective, fairness_coeff=0.5)
            report = train(model, train_t, val_t, ctx, cfg)
            assert report.n_epochs == 10
            assert all(math.isfinite(v) for v in report.val_made)

    def test_staff_coupling_pulls_rows_together(self):
        train_t, val_t = make_recovery_problem()
        # grow the sensitive mode by one data-free row and couple it to
        # row 0: the penalty is that row's only gradient source
        train_t = train_t.with_dims((4, 3, 3))
        ctx = SensitiveContext.from_labels(0, ["a", "b", "a", "b"])
        model = init_model("cp", (4, 3, 3), 1, scale=0.5, seed=8)
        start_gap = float(
            ((model.factors[0][0] - model.factors[0][3]) ** 2).sum()
        )
        cfg = TrainConfig(rank=1, batch_size=8, learning_rate=0.05,
                          max_epochs=50, patience=50, seed=8,
                          objective="staff", fairness_coeff=10.0)
        train(model, train_t, val_t, ctx, cfg,
              coupling=np.array([[0, 3]]))
        end_gap = float(
            ((model.factors[0][0] - model.factors[0][3]) ** 2).sum()
        )
        assert start_gap > 0.005
        assert end_gap < start_gap * 1e-3

    def test_divergence_names_epoch_and_batch(self):
        train_t, val_t = make_recovery_problem()
        model = init_model("cp", (3, 3, 3), 1, scale=0.5, seed=9)
        # Adam steps have magnitude ~ learning_rate, so one step this size
        # sends the rank-1 product past the float range on the next batch
        cfg = TrainConfig(rank=1, batch_size=8, learning_rate=1e160,
                          max_epochs=50, patience=50, seed=9)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError, match="epoch"):
                train(model, train_t, val_t, None, cfg)

    def test_staff_requires_coupling(self):
        train_t, val_t = make_recovery_problem()
        model = init_model("cp", (3, 3, 3), 1, seed=0)
        cfg = TrainConfig(rank=1, objective="staff", fairness_coeff=0.1)
        with pytest.raises(ConfigurationError, match="coupling"):
            train(model, train_t, val_t, None, cfg)

    def test_penalty_objectives_require_context(self):
        train_t, val_t = make_recovery_problem()
        model = init_model("cp", (3, 3, 3), 1, seed=0)
        cfg = TrainConfig(rank=1, objective="madr_penalty",
                          fairness_coeff=0.1)
        with pytest.raises(ConfigurationError, match="context"):
            train(model, train_t, val_t, None, cfg)

    def test_dims_mismatch(self):
        train_t, val_t = make_recovery_problem()
        model = init_model("cp", (4, 3, 3), 1, seed=0)
        with pytest.raises(ConfigurationError, match="dims"):
            train(model, train_t, val_t, None, TrainConfig(rank=1))


class TestTrainReport:
    def test_write_csv_round_trip(self, tmp_path):
        report = TrainReport(
            train_loss=[3.5, 2.25], val_mse=[1.5, 0.75],
            val_made=[float("nan"), 0.125], best_epoch=1,
        )
        path = tmp_path / "log.csv"
        report.write_csv(path)
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["epoch", "train_loss", "val_mse", "val_made"]
        assert [r[0] for r in rows[1:]] == ["0", "1"]
        assert float(rows[1][1]) == 3.5
        assert math.isnan(float(rows[1][3]))
        assert float(rows[2][3]) == 0.125
