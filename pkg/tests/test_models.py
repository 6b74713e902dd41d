"""
Tests for model specs, classifiers and the training loop.
"""

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from xai_inversion.core.config import TrainingConfig
from xai_inversion.core.exceptions import (
    DatasetValidationError,
    ShapeMismatchError,
    SpecValidationError,
    TrainingDivergedError,
)
from xai_inversion.data.profiles import get_profile
from xai_inversion.models.classifier import (
    PredictionVector,
    accuracy,
    build_classifier,
    embed,
    load_classifier,
    predict,
    predict_batch,
    save_classifier,
    train_classifier,
)
from xai_inversion.models.spec import LayerSpec, ModelSpec, conv, fc, infer_shapes, pool
from xai_inversion.models.training import fit
from xai_inversion.models.zoo import classifier_spec, evaluation_spec, target_spec

from .fixtures import random_images


def tiny_spec(classes: int = 3) -> ModelSpec:
    return classifier_spec("tiny", (8, 8, 1), classes, (4, 8), 16)


class TestSpecs(unittest.TestCase):
    """Tests for declarative specs and shape inference."""

    def test_mnist_target_table(self):
        """Test the MNIST target layer table at full width."""
        spec = target_spec(get_profile("mnist"))
        shapes = infer_shapes(spec)
        self.assertEqual(shapes["conv1"], (32, 32, 128))
        self.assertEqual(shapes["pool1"], (16, 16, 128))
        self.assertEqual(shapes["conv2"], (16, 16, 256))
        self.assertEqual(shapes["pool2"], (8, 8, 256))
        self.assertEqual(shapes["fc1"], (1, 1, 512))
        self.assertEqual(shapes["fc2"], (1, 1, 10))

    def test_icv_tables(self):
        """Test the iCV-MEFED target and evaluation output widths."""
        profile = get_profile("icv_mefed")
        self.assertEqual(infer_shapes(target_spec(profile))["fc2"], (1, 1, 6))
        self.assertEqual(infer_shapes(evaluation_spec(profile))["fc2"], (1, 1, 115))
        self.assertEqual(infer_shapes(target_spec(profile))["conv3"], (32, 32, 512))

    def test_width_scale(self):
        """Test that width_scale shrinks hidden widths but keeps the output."""
        shapes = infer_shapes(target_spec(get_profile("mnist"), width_scale=0.0625))
        self.assertEqual(shapes["conv1"][2], 8)
        self.assertEqual(shapes["fc1"][2], 32)
        self.assertEqual(shapes["fc2"][2], 10)

    def test_feature_map_mismatch(self):
        """Test that a wrong declared feature map names the layer."""
        layers = (conv("conv1", 4, feature_map=8), pool("pool1", feature_map=3), fc("fc1", 3))
        spec = ModelSpec("bad", layers, (8, 8, 1), 3)
        with self.assertRaises(SpecValidationError) as raised:
            infer_shapes(spec)
        self.assertEqual(raised.exception.layer, "pool1")

    def test_wrong_output_width(self):
        """Test that the classifier output must have |C| units."""
        spec = ModelSpec("bad", (conv("conv1", 4), fc("fc1", 4)), (8, 8, 1), 3)
        with self.assertRaises(SpecValidationError):
            infer_shapes(spec)

    def test_upsample_in_classifier(self):
        """Test that classifiers may not contain upsample layers."""
        layer = LayerSpec("upsample", "up", 4, kernel=4, stride=2, padding=1)
        spec = ModelSpec("bad", (layer, fc("fc1", 3)), (8, 8, 1), 3)
        with self.assertRaises(SpecValidationError):
            infer_shapes(spec)

    def test_spec_dict(self):
        """Test spec serialisation."""
        spec = tiny_spec()
        self.assertEqual(ModelSpec.from_dict(spec.to_dict()), spec)


class TestClassifier(unittest.TestCase):
    """Tests for classifier inference, persistence and training."""

    def setUp(self):
        """Set up a tiny classifier."""
        self.model = build_classifier(tiny_spec(), seed=0)
        self.images = random_images(6)

    def test_deterministic_build(self):
        """Test that a seed fixes the initial parameters."""
        other = build_classifier(tiny_spec(), seed=0)
        for a, b in zip(self.model.parameters(), other.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_predictions_are_distributions(self):
        """Test softmax outputs."""
        predictions = predict_batch(self.model, self.images)
        self.assertEqual(predictions.shape, (6, 3))
        np.testing.assert_allclose(predictions.sum(axis=1), 1.0, atol=1e-9)
        single = predict(self.model, self.images[0])
        self.assertIsInstance(single, PredictionVector)
        np.testing.assert_allclose(single.confidences, predictions[0], atol=1e-6)

    def test_prediction_vector(self):
        """Test PredictionVector invariants and tie-breaking."""
        vector = PredictionVector(np.array([0.4, 0.4, 0.2]))
        self.assertEqual(vector.label, 0)
        self.assertAlmostEqual(vector.confidence, 0.4)
        with self.assertRaises(DatasetValidationError):
            PredictionVector(np.array([0.5, 0.6]))

    def test_shape_mismatch(self):
        """Test that wrong image shapes are rejected."""
        with self.assertRaises(ShapeMismatchError):
            predict_batch(self.model, random_images(2, shape=(16, 16, 1)))

    def test_embedding(self):
        """Test the penultimate embedding width."""
        self.assertEqual(embed(self.model, self.images[0]).shape, (16,))

    def test_save_load(self):
        """Test that a reloaded classifier predicts identically."""
        with tempfile.TemporaryDirectory() as tmp:
            path = save_classifier(self.model, Path(tmp) / "m.pt")
            restored = load_classifier(path)
        np.testing.assert_array_equal(predict_batch(restored, self.images), predict_batch(self.model, self.images))

    def test_training_learns(self):
        """Test that training fits a separable toy task."""
        images = np.zeros((30, 8, 8, 1), dtype=np.float32)
        labels = np.arange(30) % 3
        for i, label in enumerate(labels):
            images[i, :, 2 * label:2 * label + 2] = 1.0
        cfg = TrainingConfig(learning_rate=1e-2, batch_size=10, epochs=30, seed=0)
        model, log = train_classifier(self.model, images, labels, cfg, held_out=(images, labels))
        self.assertEqual(len(log), 30)
        self.assertLess(log.final_loss, log.first_loss)
        final = accuracy(model, images, labels)
        self.assertGreaterEqual(final, 0.9)
        self.assertEqual(log.metric("accuracy")[-1], final)

    def test_label_out_of_range(self):
        """Test that training rejects labels outside [0, |C|)."""
        with self.assertRaises(DatasetValidationError):
            train_classifier(self.model, self.images, np.array([0, 1, 2, 3, 0, 1]), TrainingConfig(epochs=1))

    def test_parameter_gradients_match_finite_differences(self):
        """Test backpropagated cross-entropy gradients of every parameter tensor in double precision."""
        model = self.model.double()
        images = torch.from_numpy(self.images[:4].transpose(0, 3, 1, 2).astype(np.float64))
        labels = torch.tensor([0, 1, 2, 1])

        def loss() -> torch.Tensor:
            return F.cross_entropy(model(images), labels)

        model.zero_grad()
        loss().backward()
        rng = np.random.default_rng(12)
        step = 1e-6
        for name, parameter in model.named_parameters():
            flat, grad = parameter.data.view(-1), parameter.grad.view(-1)
            for position in rng.choice(flat.numel(), size=min(5, flat.numel()), replace=False).tolist():
                original = flat[position].item()
                with torch.no_grad():
                    flat[position] = original + step
                    up = loss().item()
                    flat[position] = original - step
                    down = loss().item()
                    flat[position] = original
                numeric = (up - down) / (2 * step)
                self.assertAlmostEqual(grad[position].item(), numeric, delta=1e-7 + 1e-4 * abs(numeric), msg=name)


class TestFit(unittest.TestCase):
    """Tests for the shared training loop."""

    def test_zero_epochs(self):
        """Test that zero epochs leave an empty log."""
        layer = torch.nn.Linear(2, 1)
        data = (torch.zeros(4, 2), torch.zeros(4, 1))
        log = fit(layer, data, lambda x, y: ((layer(x) - y) ** 2).mean(), TrainingConfig(epochs=0))
        self.assertEqual(len(log), 0)
        self.assertIsNone(log.final_loss)

    def test_divergence(self):
        """Test that a non-finite loss aborts training."""
        layer = torch.nn.Linear(2, 1)
        data = (torch.zeros(4, 2),)
        with self.assertRaises(TrainingDivergedError) as raised:
            fit(layer, data, lambda x: layer(x).sum() * math.inf, TrainingConfig(epochs=1))
        self.assertEqual(raised.exception.epoch, 1)


if __name__ == "__main__":
    unittest.main()
