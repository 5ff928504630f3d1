import numpy as np
import pytest

from saps.errors import ValidationError
from saps.objectives import (
    DataShard,
    MlpObjective,
    QuadraticObjective,
    finite_difference_gradient,
    load_matrix,
    make_logistic,
    make_mlp,
    make_quadratic,
    save_matrix,
)


class TestQuadratic:
    def test_scalar_closed_form(self):
        # two workers with targets 0 and 2: optimum 1; with f_i = 0.5||x-b_i||^2
        # and the objective averaged over workers, f* = 0.5
        objs = [QuadraticObjective(np.array([0.0])), QuadraticObjective(np.array([2.0]))]
        x_star = np.array([1.0])
        f_star = np.mean([o.full_loss(x_star) for o in objs])
        assert f_star == pytest.approx(0.5)
        assert sum(o.full_loss(x_star) for o in objs) == pytest.approx(1.0)

    def test_gradient_zero_at_target(self):
        o = QuadraticObjective(np.array([1.0, -2.0]))
        loss, grad = o.loss_and_grad(np.array([1.0, -2.0]), np.random.default_rng(0))
        assert loss == 0.0 and np.array_equal(grad, [0.0, 0.0])

    def test_optimum_is_target_mean(self):
        objset = make_quadratic(5, 7, np.random.default_rng(1))
        np.testing.assert_allclose(
            objset.x_star, np.mean(objset.meta["targets"], axis=0), atol=1e-12
        )

    def test_homogeneous_targets(self):
        objset = make_quadratic(4, 3, np.random.default_rng(2), heterogeneity=0.0)
        for b in objset.meta["targets"]:
            np.testing.assert_array_equal(b, objset.meta["targets"][0])
        assert objset.f_star == pytest.approx(0.0, abs=1e-24)

    def test_fstar_from_closed_form(self):
        objset = make_quadratic(3, 4, np.random.default_rng(3))
        direct = np.mean([o.full_loss(objset.x_star) for o in objset.objectives])
        assert objset.f_star == pytest.approx(direct, rel=1e-12)


class TestLogistic:
    def _objective(self, seed=0, n=60, d=5):
        rng = np.random.default_rng(seed)
        objset = make_logistic(2, n, d, "iid", rng)
        return objset.objectives[0]

    def test_gradient_matches_finite_differences(self):
        o = self._objective()
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            w = rng.normal(size=o.dim)
            _, grad = o._loss_grad(w, o.shard.features, o.shard.labels)
            fd = finite_difference_gradient(o.full_loss, w)
            worst = max(worst, np.max(np.abs(grad - fd)) / max(np.linalg.norm(fd), 1.0))
        assert worst < 1e-6

    def test_zero_weights_give_log_two(self):
        o = self._objective()
        assert o.full_loss(np.zeros(o.dim)) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_label_skew_shards_are_skewed(self):
        objset = make_logistic(4, 400, 6, "label-skew", np.random.default_rng(5))
        fractions = [o.shard.labels.mean() for o in objset.objectives]
        assert min(fractions) < 0.2 and max(fractions) > 0.8
        for o in objset.objectives:
            assert o.shard.scheme == "label-skew"

    def test_shards_cover_dataset_disjointly(self):
        n_samples = 101
        objset = make_logistic(4, n_samples, 3, "iid", np.random.default_rng(6))
        total = sum(o.shard.features.shape[0] for o in objset.objectives)
        assert total == n_samples


class TestMlp:
    def test_gradient_matches_finite_differences(self):
        objset = make_mlp(2, 40, 4, 3, "iid", np.random.default_rng(1))
        o = objset.objectives[0]
        rng = np.random.default_rng(2)
        for _ in range(20):
            theta = rng.normal(size=o.dim)
            _, grad = o._loss_grad(theta, o.shard.features, o.shard.labels)
            fd = finite_difference_gradient(o.full_loss, theta)
            rel = np.max(np.abs(grad - fd)) / max(np.linalg.norm(fd), 1.0)
            assert rel < 1e-5

    def test_zero_weights_predict_half(self):
        objset = make_mlp(2, 20, 4, 3, "iid", np.random.default_rng(3))
        o = objset.objectives[0]
        assert o.full_loss(np.zeros(o.dim)) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_overtraining_one_sample_drives_loss_down(self):
        shard = DataShard(np.array([[1.0, -1.0]]), np.array([1.0]), "iid")
        o = MlpObjective(shard, hidden=4, batch_size=1)
        rng = np.random.default_rng(4)
        theta = 0.5 * rng.normal(size=o.dim)
        for _ in range(3000):
            _, g = o._loss_grad(theta, shard.features, shard.labels)
            theta -= 0.5 * g
        assert o.full_loss(theta) < 1e-3

    def test_parameter_count(self):
        objset = make_mlp(2, 20, 5, 7, "iid", np.random.default_rng(8))
        assert objset.dim == 5 * 7 + 7 + 7 + 1


class TestMatrixFile:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(0).normal(size=(9, 4))
        path = tmp_path / "data.bin"
        save_matrix(path, m)
        assert np.array_equal(load_matrix(path), m)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        save_matrix(path, np.ones((3, 3)))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValidationError):
            load_matrix(path)


def test_empty_shard_rejected():
    with pytest.raises(ValidationError):
        DataShard(np.empty((0, 3)), np.empty(0), "iid")
