import math

import numpy as np
import pytest

from srm_dyn.core import Dataset, OptConfig
from srm_dyn.errors import InvalidInputError
from srm_dyn.io import (REPORT_COLUMNS, load_dataset, load_model, load_report_table, save_curves, save_dataset,
                        save_model, save_report)
from srm_dyn.nn import MlpPredictor, layer_shapes
from srm_dyn.rkhs import Kernel, KernelPredictor
from srm_dyn.srm import Hierarchy, srm_select


class TestDataset:
    def test_round_trip_exact(self, tmp_path, small_pendulum_data):
        p = save_dataset(small_pendulum_data, tmp_path / "d.csv")
        S = load_dataset(p)
        assert S.states.tobytes() == small_pendulum_data.states.tobytes()
        assert S.state_bound == small_pendulum_data.state_bound

    def test_header(self, tmp_path, small_pendulum_data):
        p = save_dataset(small_pendulum_data, tmp_path / "d.csv")
        lines = p.read_text().splitlines()
        assert lines[0] == "# state_bound=2.2"
        assert lines[1] == "traj_id,t,x0,x1,x2,x3"

    def test_bound_override(self, tmp_path, small_pendulum_data):
        p = save_dataset(small_pendulum_data, tmp_path / "d.csv")
        assert load_dataset(p, state_bound=5.0).state_bound == 5.0

    def test_missing_bound(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("traj_id,t,x0\n0,0,0.1\n0,1,0.2\n")
        with pytest.raises(InvalidInputError, match="state_bound"):
            load_dataset(p)
        assert load_dataset(p, 1.0).T == 1

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# state_bound=1\nid,time,x\n0,0,0.1\n")
        with pytest.raises(InvalidInputError, match="header"):
            load_dataset(p)

    def test_missing_pair(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# state_bound=1\ntraj_id,t,x0\n0,0,0.1\n0,1,0.2\n1,0,0.3\n")
        with pytest.raises(InvalidInputError):
            load_dataset(p)

    def test_bound_violation(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# state_bound=0.5\ntraj_id,t,x0\n0,0,0.1\n0,1,0.9\n")
        with pytest.raises(InvalidInputError, match="trajectory 0"):
            load_dataset(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# state_bound=1\n")
        with pytest.raises(InvalidInputError):
            load_dataset(p)


class TestModel:
    def test_kernel_round_trip(self, tmp_path, rng):
        f = KernelPredictor(rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), Kernel.gaussian(0.3), 2.5)
        g = load_model(save_model(f, tmp_path / "m.csv"))
        assert g.kernel == f.kernel and g.clip_bound == 2.5
        assert g.alphas.tobytes() == f.alphas.tobytes()
        X = rng.normal(size=(4, 2))
        np.testing.assert_array_equal(g.predict(X), f.predict(X))

    def test_polynomial_kernel_round_trip(self, tmp_path, rng):
        f = KernelPredictor(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), Kernel.polynomial(0.5, 3), 1.0)
        assert load_model(save_model(f, tmp_path / "m.csv")).kernel == f.kernel

    def test_mlp_round_trip(self, tmp_path, rng):
        Ws = tuple(rng.normal(size=s) for s in layer_shapes(3, 3, 4))
        f = MlpPredictor(Ws, "leaky_relu", 1.5)
        g = load_model(save_model(f, tmp_path / "m.csv"))
        assert (g.depth, g.width, g.activation, g.clip_bound) == (3, 4, "leaky_relu", 1.5)
        for a, b in zip(f.weights, g.weights):
            assert a.tobytes() == b.tobytes()

    def test_unknown_kind(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("# kind=forest\na,b\n")
        with pytest.raises(InvalidInputError, match="forest"):
            load_model(p)

    def test_unserializable(self, tmp_path):
        with pytest.raises(InvalidInputError):
            save_model(lambda x: x, tmp_path / "m.csv")


class TestReport:
    @pytest.fixture
    def report(self, small_pendulum_data):
        return srm_select(small_pendulum_data, Hierarchy.gaussian([0.1, 1.0], 3.0), opt=OptConfig(max_iter=50))

    def test_round_trip(self, tmp_path, report):
        rows = load_report_table(save_report(report, tmp_path / "r.csv"))
        assert len(rows) == 2
        assert list(rows[0]) == REPORT_COLUMNS
        for rec, row in zip(rows, report.rows):
            assert rec["class_desc"] == row.description
            assert rec["train_err"] == row.training_error
            assert rec["srm_err"] == row.srm_error
            assert math.isnan(rec["true_err_mean"])
        assert [r["selected"] for r in rows] == [int(k == report.selected_k) for k in range(2)]

    def test_curves(self, tmp_path, report):
        rows = load_report_table(save_curves(report, tmp_path / "c.csv"))
        assert [r["k"] for r in rows] == [0, 1]
        assert rows[1]["train_err"] == report.rows[1].training_error
