"""
Tests for inversion architectures, models, training and the breach store.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from xai_inversion.core.config import TrainingConfig
from xai_inversion.core.exceptions import (
    ArtifactExistsError,
    DatasetLoadError,
    MissingExplanationError,
    ProvenanceError,
    ShapeMismatchError,
    SpecValidationError,
)
from xai_inversion.data.profiles import ImageTensor, get_profile
from xai_inversion.data.splits import make_splits
from xai_inversion.inversion.architectures import explanation_inverter_spec, inversion_spec, stage_channels
from xai_inversion.inversion.breach import BreachBatch, BreachStore, check_provenance, simulate_breach
from xai_inversion.inversion.model import (
    InversionMethod,
    build_inversion_model,
    invert,
    invert_batch,
    load_inversion_model,
    save_inversion_model,
)
from xai_inversion.inversion.training import fit_inversion, train_inversion
from xai_inversion.models.classifier import build_classifier
from xai_inversion.models.spec import infer_shapes
from xai_inversion.models.zoo import classifier_spec

from .fixtures import TINY_PROFILE, random_images


def random_predictions(count: int, classes: int = 3, seed: int = 0) -> np.ndarray:
    raw = np.random.default_rng(seed).random((count, classes)) + 0.01
    return raw / raw.sum(axis=1, keepdims=True)


class TestArchitectures(unittest.TestCase):
    """Tests for the generated layer tables."""

    def test_stage_channels(self):
        """Test the 4096 / r channel rule and the image stage."""
        self.assertEqual(stage_channels(4, 128, 1), 1024)
        self.assertEqual(stage_channels(64, 128, 1), 64)
        self.assertEqual(stage_channels(128, 128, 1), 1)
        self.assertEqual(stage_channels(512, 1024, 3), 16)
        self.assertEqual(stage_channels(4, 32, 1, width_scale=0.0625), 64)

    def test_prediction_only_decoder(self):
        """Test the decoder of the MNIST prediction-only model."""
        spec = inversion_spec("prediction_only", (32, 32, 1), 10)
        shapes = infer_shapes(spec)
        self.assertEqual(shapes["up4"], (4, 4, 1024))
        self.assertEqual(shapes["dec16"], (16, 16, 256))
        self.assertEqual(shapes["dec32"], (32, 32, 1))
        self.assertIsNone(spec.explanation_shape)

    def test_unet_bypass_links(self):
        """Test that U-Net methods link encoder convs to decoder convs of equal resolution."""
        spec = inversion_spec("flatten_unet", (32, 32, 1), 10, (16, 16, 1), width_scale=0.0625)
        links = {layer.name: layer.bypass_link for layer in spec.layers if layer.bypass_link}
        self.assertEqual(links, {"dec4": "enc_conv4", "dec8": "enc_conv8", "dec16": "enc_conv16"})
        self.assertIn("explanation", spec.layer("fuse").inputs)
        self.assertIn("enc_fc", spec.layer("fuse").inputs)

    def test_cnn_has_no_bypass(self):
        """Test that the plain encoder method adds no bypass links."""
        spec = inversion_spec("cnn", (8, 8, 1), 3, (4, 4, 1))
        self.assertFalse(any(layer.bypass_link for layer in spec.layers))
        self.assertEqual(spec.layer("fuse").inputs, ("prediction", "enc_fc"))

    def test_unet_needs_shared_resolution(self):
        """Test that a U-Net without any matching resolution is rejected."""
        with self.assertRaises(SpecValidationError):
            inversion_spec("unet", (8, 8, 1), 3, (2, 2, 1))

    def test_projection_for_wide_stacks(self):
        """Test the 1x1 projection of flattened stacks above the feature budget."""
        spec = inversion_spec("flatten", (8, 8, 1), 3, (4, 4, 3), max_flatten_features=32)
        self.assertEqual(spec.layer("project").out_channels, 2)
        self.assertIn("project", spec.layer("fuse").inputs)
        narrow = inversion_spec("flatten", (8, 8, 1), 3, (4, 4, 3), max_flatten_features=1024)
        self.assertEqual(narrow.layer("fuse").inputs, ("prediction", "explanation"))

    def test_invalid_requests(self):
        """Test unknown methods, bad image sides and missing explanations."""
        with self.assertRaises(SpecValidationError):
            inversion_spec("deconv", (8, 8, 1), 3)
        with self.assertRaises(SpecValidationError):
            inversion_spec("prediction_only", (12, 12, 1), 3)
        with self.assertRaises(SpecValidationError):
            inversion_spec("flatten", (8, 8, 1), 3)

    def test_explanation_inverter(self):
        """Test the CAM-sized decoder."""
        spec = explanation_inverter_spec((16, 16), 10, width_scale=0.0625)
        self.assertEqual(infer_shapes(spec)[spec.layers[-1].name], (16, 16, 1))


class TestInversionModel(unittest.TestCase):
    """Tests for inversion models and reconstruction."""

    def setUp(self):
        """Set up a flatten-U-Net method on 8x8 images with 4x4 Grad-CAMs."""
        self.method = InversionMethod.create("flatten_unet", (8, 8, 1), 3, "grad_cam", (4, 4, 1), width_scale=0.0625)
        self.model = build_inversion_model(self.method, TINY_PROFILE, seed=0)
        self.predictions = random_predictions(5)
        self.explanations = np.random.default_rng(1).random((5, 1, 4, 4)).astype(np.float32)

    def test_run_ids(self):
        """Test run-matrix identifiers."""
        self.assertEqual(self.method.run_id, "flatten_unet__grad_cam")
        baseline = InversionMethod.create("prediction_only", (8, 8, 1), 3, "grad_cam", (4, 4, 1))
        self.assertEqual(baseline.run_id, "prediction_only")
        self.assertIsNone(baseline.explanation_kind)

    def test_profile_mismatch(self):
        """Test that the decoder output must match the profile."""
        with self.assertRaises(SpecValidationError):
            build_inversion_model(self.method, get_profile("mnist"))

    def test_reconstruction_range_and_shape(self):
        """Test that reconstructions are clamped (N, H, W, C) images."""
        images = invert_batch(self.model, self.predictions, self.explanations, batch_size=2)
        self.assertEqual(images.shape, (5, 8, 8, 1))
        self.assertGreaterEqual(float(images.min()), 0.0)
        self.assertLessEqual(float(images.max()), 1.0)

    def test_missing_explanation(self):
        """Test that an explanation-consuming model refuses prediction-only input."""
        with self.assertRaises(MissingExplanationError):
            invert_batch(self.model, self.predictions)

    def test_shape_mismatch(self):
        """Test prediction width and explanation shape checks."""
        with self.assertRaises(ShapeMismatchError):
            invert_batch(self.model, random_predictions(5, classes=4), self.explanations)
        with self.assertRaises(ShapeMismatchError):
            invert_batch(self.model, self.predictions, np.zeros((5, 1, 8, 8), dtype=np.float32))

    def test_invert_single_tuple(self):
        """Test reconstruction from one breached tuple."""
        batch = BreachBatch(self.predictions, np.arange(5), {"grad_cam": self.explanations})
        image = invert(self.model, batch.tuple(2))
        self.assertIsInstance(image, ImageTensor)
        np.testing.assert_allclose(
            image.pixels, invert_batch(self.model, self.predictions, self.explanations)[2], atol=1e-6
        )

    def test_checkpoint_round_trip(self):
        """Test that a reloaded model reconstructs identically."""
        with tempfile.TemporaryDirectory() as tmp:
            path = save_inversion_model(self.model, Path(tmp) / "model.pt", {"run_id": self.method.run_id})
            restored = load_inversion_model(path)
        self.assertEqual(restored.method.run_id, self.method.run_id)
        np.testing.assert_array_equal(
            invert_batch(restored, self.predictions, self.explanations),
            invert_batch(self.model, self.predictions, self.explanations),
        )

    def test_sigmoid_output(self):
        """Test the sigmoid output activation."""
        model = build_inversion_model(self.method, seed=0, output_activation="sigmoid")
        images = invert_batch(model, self.predictions, self.explanations)
        self.assertTrue(((images > 0) & (images < 1)).all())
        with self.assertRaises(SpecValidationError):
            build_inversion_model(self.method, output_activation="tanh")


class TestInversionTraining(unittest.TestCase):
    """Tests for reconstruction training."""

    def setUp(self):
        """Set up breached tuples paired with images."""
        self.images = random_images(24, seed=4)
        self.breach = BreachBatch(
            random_predictions(20, seed=5),
            np.arange(4, 24),
            {"grad_cam": np.random.default_rng(6).random((20, 1, 4, 4))},
            partition="attack_train",
        )
        self.cfg = TrainingConfig(learning_rate=1e-2, batch_size=8, epochs=8, seed=0)

    def test_loss_decreases(self):
        """Test that training lowers the reconstruction error."""
        method = InversionMethod.create("cnn", (8, 8, 1), 3, "grad_cam", (4, 4, 1), width_scale=0.0625)
        model, log = train_inversion(build_inversion_model(method, seed=0), self.breach, self.images, self.cfg)
        self.assertEqual(len(log), 8)
        self.assertLess(log.final_loss, log.first_loss)
        self.assertEqual(len(log.metric("validation_loss")), 8)
        self.assertIsNotNone(log.metric("validation_loss")[-1])

    def test_explanation_substitution(self):
        """Test training on substituted explanations instead of breached ones."""
        method = InversionMethod.create("flatten", (8, 8, 1), 3, "grad_cam", (4, 4, 1), width_scale=0.0625)
        batch = BreachBatch(self.breach.predictions, self.breach.source_index, partition="attack_train")
        with self.assertRaises(MissingExplanationError):
            train_inversion(build_inversion_model(method), batch, self.images, self.cfg)
        substitute = np.zeros((20, 1, 4, 4), dtype=np.float32)
        _, log = train_inversion(build_inversion_model(method), batch, self.images, self.cfg, explanations=substitute)
        self.assertEqual(len(log), 8)

    def test_target_count_mismatch(self):
        """Test that predictions and targets must align."""
        method = InversionMethod.create("prediction_only", (8, 8, 1), 3)
        with self.assertRaises(ValueError):
            fit_inversion(build_inversion_model(method), random_predictions(4), None, self.images[:3], self.cfg)


class TestReconstructionProperties(unittest.TestCase):
    """Tests for what trained and untrained inversion models must satisfy."""

    def fit_pairs(self, method: InversionMethod, predictions, explanations, targets, epochs: int = 400):
        cfg = TrainingConfig(learning_rate=1e-2, batch_size=len(predictions), epochs=epochs, seed=0)
        model = build_inversion_model(method, seed=0, output_activation="sigmoid")
        model, _ = fit_inversion(model, predictions, explanations, targets, cfg, validation_fraction=0.0)
        return model

    def test_memorizes_single_pair(self):
        """Test that prediction-only and explanation-fed models fit one tuple almost exactly."""
        rng = np.random.default_rng(30)
        target = rng.uniform(0.2, 0.8, (1, 8, 8, 1)).astype(np.float32)
        prediction = random_predictions(1, seed=31)
        explanation = rng.random((1, 1, 4, 4)).astype(np.float32)
        for method in (
            InversionMethod.create("prediction_only", (8, 8, 1), 3, width_scale=0.0625),
            InversionMethod.create("flatten", (8, 8, 1), 3, "grad_cam", (4, 4, 1), width_scale=0.0625),
        ):
            model = self.fit_pairs(method, prediction, explanation, target)
            error = invert_batch(model, prediction, explanation) - target
            self.assertLess(float((error**2).mean()), 1e-3, method.run_id)

    def test_prediction_only_ignores_explanations(self):
        """Test that a prediction-only model reconstructs the same image whatever explanation comes along."""
        method = InversionMethod.create("prediction_only", (8, 8, 1), 3, width_scale=0.0625)
        model = build_inversion_model(method, TINY_PROFILE, seed=0)
        predictions = random_predictions(4, seed=32)
        rng = np.random.default_rng(33)
        first = invert_batch(model, predictions, rng.random((4, 1, 4, 4)))
        second = invert_batch(model, predictions, rng.random((4, 2, 8, 8)))
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(first, invert_batch(model, predictions))

    def test_prediction_only_varies_by_class(self):
        """Test that distinct class-conditional predictions give distinct reconstructions."""
        predictions = np.eye(3, dtype=np.float32)
        targets = random_images(3, seed=34) * 0.6 + 0.2
        method = InversionMethod.create("prediction_only", (8, 8, 1), 3, width_scale=0.0625)
        images = invert_batch(self.fit_pairs(method, predictions, None, targets), predictions)
        for a in range(3):
            for b in range(a + 1, 3):
                self.assertGreater(float(np.abs(images[a] - images[b]).max()), 0.05)
        self.assertLess(float(((images - targets) ** 2).mean()), 1e-2)

    def test_parameter_gradients_match_finite_differences(self):
        """Test decoder and encoder parameter gradients against central differences in double precision."""
        method = InversionMethod.create("flatten_unet", (8, 8, 1), 3, "grad_cam", (4, 4, 1), width_scale=0.0625)
        model = build_inversion_model(method, seed=0, output_activation="sigmoid").double()
        rng = np.random.default_rng(35)
        predictions = torch.from_numpy(random_predictions(4, seed=36).astype(np.float64))
        explanations = torch.from_numpy(rng.random((4, 1, 4, 4)))
        targets = torch.from_numpy(rng.random((4, 1, 8, 8)))

        def loss() -> torch.Tensor:
            return F.mse_loss(model(predictions, explanations), targets)

        model.zero_grad()
        loss().backward()
        step = 1e-6
        for name, parameter in model.named_parameters():
            flat, grad = parameter.data.view(-1), parameter.grad.view(-1)
            for position in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False).tolist():
                original = flat[position].item()
                with torch.no_grad():
                    flat[position] = original + step
                    up = loss().item()
                    flat[position] = original - step
                    down = loss().item()
                    flat[position] = original
                numeric = (up - down) / (2 * step)
                self.assertAlmostEqual(grad[position].item(), numeric, delta=1e-7 + 1e-4 * abs(numeric), msg=name)


class TestBreach(unittest.TestCase):
    """Tests for breach simulation and storage."""

    def setUp(self):
        """Set up a target, a split plan and a temporary store."""
        self.tmp = tempfile.TemporaryDirectory()
        self.store = BreachStore(Path(self.tmp.name) / "breach")
        self.target = build_classifier(classifier_spec("tiny", (8, 8, 1), 3, (4, 8), 16), seed=2)
        self.images = random_images(20, seed=7)
        self.plan = make_splits(20, 0)

    def tearDown(self):
        self.tmp.cleanup()

    def breach(self, partition: str, kinds=("grad_cam",)) -> BreachBatch:
        index = self.plan.indices(partition)
        return simulate_breach(self.target, self.images[index], index, kinds, partition=partition, run_id="b")

    def test_simulate(self):
        """Test that explanations explain the predicted class."""
        batch = self.breach("attack_test", ("grad_cam", "sigma_cam"))
        self.assertEqual(batch.explanations["grad_cam"].shape, (len(batch), 1, 4, 4))
        np.testing.assert_allclose(
            batch.explanations["grad_cam"][:, 0],
            batch.explanations["sigma_cam"][np.arange(len(batch)), batch.explained_classes],
            atol=1e-6,
        )
        check_provenance(batch, self.plan)

    def test_store_round_trip(self):
        """Test writing, loading and extending a partition."""
        batch = self.breach("attack_train")
        self.store.write(batch, {"split_sha256": self.plan.checksum()})
        self.store.write(self.breach("attack_train", ("lrp",)))
        self.assertEqual(self.store.partitions(), ["attack_train"])
        self.assertEqual(self.store.kinds("attack_train"), ["grad_cam", "lrp"])
        loaded = self.store.load("attack_train", ["grad_cam"])
        np.testing.assert_array_equal(loaded.predictions, batch.predictions)
        np.testing.assert_array_equal(loaded.explanation("grad_cam"), batch.explanation("grad_cam"))
        self.assertEqual(self.store.manifest()["provenance"]["split_sha256"], self.plan.checksum())

    def test_store_errors(self):
        """Test missing partitions, missing kinds and conflicting rewrites."""
        with self.assertRaises(DatasetLoadError):
            self.store.load("attack_test")
        batch = self.breach("attack_test")
        self.store.write(batch)
        with self.assertRaises(MissingExplanationError):
            self.store.load("attack_test", ["lrp"])
        altered = BreachBatch(batch.predictions[::-1], batch.source_index, partition="attack_test")
        with self.assertRaises(ArtifactExistsError):
            self.store.write(altered)

    def test_provenance(self):
        """Test that target-partition images may not reach the attacker."""
        index = self.plan.target_indices[:3]
        batch = BreachBatch(random_predictions(3), index, partition="attack_train")
        with self.assertRaises(ProvenanceError):
            check_provenance(batch, self.plan)


if __name__ == "__main__":
    unittest.main()
