# std-lib imports
import math
import unittest

# 3 party imports
import numpy as np
from parameterized import parameterized
from sklearn.metrics import mean_squared_error, r2_score

# project imports
from simic.core.tensor import Tensor
from simic.objective.losses import huber_loss
from simic.objective.metrics import MetricsReport, compare_reports, report_from_predictions, r_squared, rmse


class TestHuberLoss(unittest.TestCase):
    @parameterized.expand([
        ("quadratic_branch", 0.5, 0.125),
        ("at_threshold", 1.0, 0.5),
        ("linear_branch", 2.0, 1.5),
        ("negative_error", -2.0, 1.5),
    ])
    def test_examples(self, name, error, expected):
        loss = huber_loss(Tensor([error]), Tensor([0.0]), delta=1.0)
        self.assertAlmostEqual(loss.item(), expected, places=12)

    def test_branches_meet_at_delta(self):
        delta = 0.3
        inside = huber_loss(Tensor([delta - 1e-12]), Tensor([0.0]), delta=delta).item()
        outside = huber_loss(Tensor([delta + 1e-12]), Tensor([0.0]), delta=delta).item()
        self.assertAlmostEqual(inside, delta / 2.0, places=9)
        self.assertAlmostEqual(outside, delta / 2.0, places=9)

    def test_sum_and_mean_reductions(self):
        pred = Tensor([[0.5, 2.0, 0.0], [1.0, -0.5, 3.0]])
        target = Tensor(np.zeros((2, 3)))
        total = 0.125 + 1.5 + 0.0 + 0.5 + 0.125 + 2.5
        self.assertAlmostEqual(huber_loss(pred, target).item(), total, places=12)
        self.assertAlmostEqual(huber_loss(pred, target, reduction="mean").item(), total / 6, places=12)

    def test_gradient_is_clipped(self):
        pred = Tensor([0.5, 5.0, -5.0], requires_grad=True)
        huber_loss(pred, Tensor(np.zeros(3))).backward()
        np.testing.assert_allclose(pred.grad, [0.5, 1.0, -1.0])

    @parameterized.expand([
        ("zero_delta", dict(delta=0.0)),
        ("negative_delta", dict(delta=-1.0)),
        ("bad_reduction", dict(reduction="max")),
    ])
    def test_invalid(self, name, kwargs):
        with self.assertRaises(ValueError):
            huber_loss(Tensor([1.0]), Tensor([0.0]), **kwargs)


class TestRmse(unittest.TestCase):
    def test_perfect(self):
        self.assertEqual(rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0)

    def test_unit_offset(self):
        self.assertAlmostEqual(rmse([1, 2, 3], [2, 3, 4]), 1.0, places=12)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(0)
        y, y_hat = rng.normal(size=50), rng.normal(size=50)
        self.assertAlmostEqual(rmse(y, y_hat), math.sqrt(mean_squared_error(y, y_hat)), places=12)

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            rmse([1.0, 2.0], [1.0])


class TestRSquared(unittest.TestCase):
    def test_perfect(self):
        self.assertEqual(r_squared([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]), 1.0)

    def test_mean_predictor(self):
        y = np.array([1.0, 2.0, 6.0])
        self.assertAlmostEqual(r_squared(y, np.full(3, y.mean())), 0.0, places=12)

    def test_worse_than_mean(self):
        self.assertLess(r_squared([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]), 0.0)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=40)
        y_hat = y + rng.normal(scale=0.3, size=40)
        self.assertAlmostEqual(r_squared(y, y_hat), r2_score(y, y_hat), places=12)

    @parameterized.expand([
        ("zero_variance", [2.0, 2.0, 2.0], [1.0, 2.0, 3.0]),
        ("single_sample", [1.0], [1.0]),
    ])
    def test_undefined(self, name, y, y_hat):
        with self.assertRaises(ValueError):
            r_squared(y, y_hat)


class TestReports(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(2)
        self.labels = rng.uniform(0.05, 0.4, size=(12, 3))
        self.labels[:, 2] = rng.uniform(0.03, 0.05, size=12)
        self.predictions = self.labels + rng.normal(scale=0.01, size=(12, 3))

    def test_full_mode_has_three_targets(self):
        report = report_from_predictions(self.labels, self.predictions, "full", "eval", name="run")
        self.assertEqual(report.targets, ["width_um", "height_um", "radius_um"])
        for k, target in enumerate(report.targets):
            self.assertAlmostEqual(report.rmse[target],
                                   math.sqrt(mean_squared_error(self.labels[:, k], self.predictions[:, k])), places=12)
            self.assertAlmostEqual(report.r2[target], r2_score(self.labels[:, k], self.predictions[:, k]), places=12)

    def test_half_mode_has_radius_only(self):
        report = report_from_predictions(self.labels, self.predictions[:, 2:], "half", "eval")
        self.assertEqual(report.targets, ["radius_um"])
        frame = report.to_frame()
        self.assertEqual(len(frame), 1)
        self.assertEqual(frame["target"].iloc[0], "radius_um")

    def test_csv_is_deterministic(self):
        first = report_from_predictions(self.labels, self.predictions, "full", "eval").to_csv()
        second = report_from_predictions(self.labels, self.predictions, "full", "eval").to_csv()
        self.assertEqual(first, second)
        self.assertTrue(first.startswith("target,rmse,r2,n,split,mode\n"))

    def test_table_mentions_split(self):
        table = report_from_predictions(self.labels, self.predictions, "full", "val", name="resnet").to_table()
        self.assertIn("val split", table)
        self.assertIn("radius_um", table)

    def test_compare_reports(self):
        full = report_from_predictions(self.labels, self.predictions, "full", "eval", name="full")
        half = report_from_predictions(self.labels, self.predictions[:, 2:], "half", "eval", name="half")
        table = compare_reports([full, half])
        self.assertEqual(table["model"].tolist(), ["full", "half"])
        self.assertTrue(np.isnan(table.loc[1, "rmse_W"]))
        self.assertAlmostEqual(table.loc[1, "rmse_R"], full.rmse["radius_um"], places=12)

    def test_report_is_a_dataclass(self):
        report = MetricsReport(split="eval", mode="half", n=0)
        self.assertEqual(report.targets, [])


if __name__ == "__main__":
    unittest.main()
