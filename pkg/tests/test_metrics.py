"""
Tests for similarity metrics, explanation factors and metric reports.
"""

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from xai_inversion.core.exceptions import DatasetValidationError, ShapeMismatchError
from xai_inversion.metrics.explanation import (
    binarize_cam,
    class_mean_cams,
    explanation_relevance,
    explanation_typicalness,
    image_mask,
)
from xai_inversion.metrics.report import (
    MetricsReport,
    aggregate,
    aggregate_values,
    improvement_ratio,
    paired_difference,
)
from xai_inversion.metrics.similarity import (
    attack_accuracy,
    embedding_similarity,
    evaluate_reconstructions,
    gaussian_window,
    pixelwise_similarity,
    psnr,
    ssim,
    ssim_batch,
)
from xai_inversion.models.classifier import build_classifier, predict_batch
from xai_inversion.models.zoo import classifier_spec

from .fixtures import random_images


class TestSimilarity(unittest.TestCase):
    """Tests for image similarity metrics."""

    def setUp(self):
        """Set up random image pairs."""
        self.a = random_images(3, seed=10, shape=(16, 16, 1))
        self.b = random_images(3, seed=11, shape=(16, 16, 1))

    def test_ssim_identity_and_symmetry(self):
        """Test SSIM(x, x) = 1 and SSIM(x, y) = SSIM(y, x)."""
        self.assertAlmostEqual(ssim(self.a[0], self.a[0]), 1.0, places=9)
        self.assertAlmostEqual(ssim(self.a[0], self.b[0]), ssim(self.b[0], self.a[0]), places=12)
        self.assertLess(ssim(self.a[0], self.b[0]), 0.5)
        np.testing.assert_allclose(ssim_batch(self.a, self.b), [ssim(x, y) for x, y in zip(self.a, self.b)])

    def test_ssim_sigma(self):
        """Test the sigma check and the window size rule."""
        with self.assertRaises(ValueError):
            ssim(self.a[0], self.b[0], sigma=0.0)
        self.assertEqual(gaussian_window(1.5).shape, (11, 11))
        self.assertEqual(gaussian_window(2.5).shape, (19, 19))
        self.assertEqual(gaussian_window(2.5, limit=16).shape, (15, 15))
        self.assertAlmostEqual(float(gaussian_window(1.5).sum()), 1.0)

    def test_psnr(self):
        """Test the PSNR closed form."""
        x = np.zeros((4, 4, 1))
        self.assertAlmostEqual(psnr(x, np.full((4, 4, 1), 0.1)), 20.0, places=9)
        louder = psnr(x, np.full((4, 4, 1), 0.1))
        quieter = psnr(x, np.full((4, 4, 1), 0.1 / math.sqrt(2)))
        self.assertAlmostEqual(quieter - louder, 10 * math.log10(2), places=9)
        self.assertEqual(psnr(x, x), math.inf)

    def test_pixelwise(self):
        """Test 1 - MSE."""
        x = np.zeros((2, 2, 1))
        y = np.array([[[1.0], [0.0]], [[0.0], [0.0]]])
        self.assertAlmostEqual(pixelwise_similarity(x, y), 0.75)
        with self.assertRaises(ShapeMismatchError):
            pixelwise_similarity(x, np.zeros((3, 3, 1)))

    def test_model_metrics(self):
        """Test attack accuracy and embedding similarity with an evaluation model."""
        model = build_classifier(classifier_spec("eval", (16, 16, 1), 4, (4, 8), 16), seed=0)
        labels = predict_batch(model, self.a).argmax(axis=1)
        self.assertEqual(attack_accuracy(model, self.a, labels), 1.0)
        self.assertAlmostEqual(embedding_similarity(model, self.a[0], self.a[0]), 1.0)
        self.assertGreater(embedding_similarity(model, self.a[0], self.b[0]), 0.0)
        values = evaluate_reconstructions(model, self.a, self.b, labels, sigma=1.5)
        self.assertEqual(
            sorted(values), ["attack_accuracy", "embedding_similarity", "mse", "pixelwise_similarity", "psnr", "ssim"]
        )
        for column in values.values():
            self.assertEqual(len(column), 3)
        np.testing.assert_allclose(values["pixelwise_similarity"], 1.0 - values["mse"])


class TestExplanationFactors(unittest.TestCase):
    """Tests for relevance, typicalness and class-mean CAMs."""

    def test_relevance(self):
        """Test IoU between the CAM support and the mask."""
        cam = np.zeros((4, 4))
        cam[:2, :2] = 1.0
        mask = np.zeros((4, 4), dtype=bool)
        mask[:2, :] = True
        self.assertAlmostEqual(explanation_relevance(cam, mask), 0.5)
        self.assertAlmostEqual(explanation_relevance(cam, cam > 0), 1.0)
        self.assertEqual(explanation_relevance(np.zeros((4, 4)), np.zeros((4, 4))), 1.0)

    def test_relevance_resizes_mask(self):
        """Test that an image-sized mask is reduced to the CAM grid."""
        cam = np.zeros((2, 2))
        cam[0, 0] = 1.0
        image = np.zeros((4, 4, 1))
        image[:2, :2] = 0.8
        self.assertAlmostEqual(explanation_relevance(cam, image_mask(image)), 1.0)

    def test_binarize(self):
        """Test the half-maximum threshold."""
        np.testing.assert_array_equal(binarize_cam(np.array([[0.2, 0.5], [1.0, 0.49]])), [[False, True], [True, False]])

    def test_typicalness(self):
        """Test Pearson correlation and the constant-map case."""
        cam = np.arange(9.0).reshape(3, 3)
        self.assertAlmostEqual(explanation_typicalness(cam, 2 * cam + 1), 1.0)
        self.assertAlmostEqual(explanation_typicalness(cam, -cam), -1.0)
        self.assertIsNone(explanation_typicalness(cam, np.ones((3, 3))))
        with self.assertRaises(ShapeMismatchError):
            explanation_typicalness(cam, np.ones((2, 2)))

    def test_class_mean_cams(self):
        """Test per-class means and empty classes."""
        cams = np.stack([np.full((2, 2), v) for v in (1.0, 3.0, 5.0)])[:, None]
        means = class_mean_cams(cams, np.array([0, 0, 2]), 3)
        self.assertEqual(means.shape, (3, 2, 2))
        np.testing.assert_array_equal(means[0], np.full((2, 2), 2.0))
        np.testing.assert_array_equal(means[1], np.zeros((2, 2)))
        np.testing.assert_array_equal(means[2], np.full((2, 2), 5.0))


class TestReports(unittest.TestCase):
    """Tests for per-instance reports and aggregates."""

    def setUp(self):
        """Set up two reports over the same instances."""
        self.instances = [7, 3, 5, 1]
        self.a = MetricsReport.from_arrays(
            "a", self.instances, {"ssim": [0.5, 0.7, 0.9, 0.3], "psnr": [10.0, math.inf, 12.0, 14.0]}, {"seed": 1}
        )
        self.b = MetricsReport.from_arrays("b", self.instances, {"ssim": [0.4, 0.5, 0.6, 0.1]})

    def test_aggregate_closed_form(self):
        """Test the mean and 1.645 * sd / sqrt(n) half-width."""
        result = aggregate_values([1.0, 2.0, 3.0, 4.0])
        self.assertAlmostEqual(result["mean"], 2.5)
        self.assertAlmostEqual(result["ci90"], 1.645 * math.sqrt(1.25) / 2)
        self.assertEqual(result["n"], 4)

    def test_non_finite_values(self):
        """Test that non-finite values are excluded and too few values are refused."""
        psnr_aggregate = self.a.aggregates()["psnr"]
        self.assertEqual(psnr_aggregate["n"], 3)
        self.assertEqual(psnr_aggregate["excluded"], 1)
        with self.assertRaises(DatasetValidationError):
            aggregate_values([1.0, math.nan])

    def test_values_by_instance(self):
        """Test instance-indexed access."""
        series = self.a.values("ssim")
        self.assertEqual(list(series.index), [1, 3, 5, 7])
        self.assertEqual(series.loc[7], 0.5)

    def test_save_load_and_csv(self):
        """Test that the CSV is sorted and written once."""
        with tempfile.TemporaryDirectory() as tmp:
            directory = self.a.save(Path(tmp) / "a")
            self.a.save(directory)
            text = (directory / "metrics.csv").read_text()
            restored = MetricsReport.load(directory)
        self.assertTrue(text.startswith("run_id,instance,metric,value\n"))
        self.assertEqual(text, self.a.to_csv())
        self.assertEqual(restored.metadata, {"seed": 1})
        pd.testing.assert_series_equal(restored.values("ssim"), self.a.values("ssim"))
        self.assertEqual(restored.values("psnr").loc[3], math.inf)

    def test_paired_difference(self):
        """Test the per-instance difference and its sign decision."""
        result = paired_difference(self.a, self.b, "ssim")
        self.assertAlmostEqual(result["mean"], 0.2)
        self.assertTrue(result["positive"])
        self.assertAlmostEqual(improvement_ratio(self.a, self.b, "ssim"), 0.6 / 0.4)

    def test_aggregate_rows(self):
        """Test wrapping a long table."""
        report = aggregate(self.b.rows)
        self.assertEqual(report.run_id, "b")
        with self.assertRaises(DatasetValidationError):
            aggregate(pd.DataFrame({"run_id": ["x"], "value": [1.0]}))


if __name__ == "__main__":
    unittest.main()
