"""
Tests for the attention-transfer attack against non-explainable targets.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from xai_inversion.core.config import TrainingConfig
from xai_inversion.core.exceptions import ConfigurationError, ProvenanceError, StageOrderError
from xai_inversion.data.profiles import ImageTensor
from xai_inversion.data.splits import make_splits
from xai_inversion.inversion.breach import simulate_breach
from xai_inversion.inversion.model import invert_batch
from xai_inversion.metrics.explanation import explanation_typicalness
from xai_inversion.models.classifier import build_classifier
from xai_inversion.models.zoo import classifier_spec
from xai_inversion.surrogate.transfer import (
    SurrogateTrainer,
    attack_nonexplainable,
    attack_nonexplainable_batch,
    check_attacker_indices,
    evaluation_cams,
    invert_with_bundle,
    load_bundle,
    reconstruct_cams,
    reconstruct_surrogate_explanation,
    save_bundle,
    surrogate_cams,
    train_explanation_inverter,
)
from xai_inversion.xai.maps import normalize_batch

from .fixtures import random_images


class TestSurrogateTrainer(unittest.TestCase):
    """Tests for the staged surrogate pipeline."""

    def setUp(self):
        """Set up a target, attacker breach and fast training settings."""
        self.spec = classifier_spec("tiny", (8, 8, 1), 3, (4, 8), 16, width_scale=1.0)
        self.images = random_images(40, seed=8)
        self.labels = np.arange(40) % 3
        self.plan = make_splits(40, 0)
        target = build_classifier(self.spec, seed=3)
        index = self.plan.attack_train_indices
        self.breach = simulate_breach(target, self.images[index], index, partition="attack_train")
        fast = TrainingConfig(learning_rate=1e-3, batch_size=8, epochs=1, seed=0)
        self.training = {"surrogate_target": fast, "explanation_inverter": fast, "image_inverter": fast}

    def trainer(self, mode: str = "rs_cam") -> SurrogateTrainer:
        return SurrogateTrainer(
            self.breach,
            self.images,
            self.labels,
            self.spec,
            method="flatten_unet",
            mode=mode,
            training=self.training,
            plan=self.plan,
            width_scale=0.0625,
        )

    def test_stage_order(self):
        """Test that stages refuse to run out of order."""
        trainer = self.trainer()
        with self.assertRaises(StageOrderError):
            trainer.fit_explanation_inverter()
        with self.assertRaises(StageOrderError):
            trainer.fit_image_inverter()
        trainer.fit_surrogate_target()
        with self.assertRaises(StageOrderError):
            trainer.fit_image_inverter()
        with self.assertRaises(StageOrderError):
            trainer.bundle()

    def test_unknown_mode(self):
        """Test that only rs_cam and s_cam are accepted."""
        with self.assertRaises(ConfigurationError):
            self.trainer("cam")

    def test_provenance(self):
        """Test that attacker data may not come from the target or test splits."""
        check_attacker_indices(self.plan.attack_train_indices, self.plan)
        with self.assertRaises(ProvenanceError):
            check_attacker_indices(self.plan.target_indices[:2], self.plan)
        target = build_classifier(self.spec, seed=3)
        leaked = simulate_breach(target, self.images[:4], np.arange(4), partition="attack_train")
        leaked.source_index = self.plan.attack_test_indices[:4]
        with self.assertRaises(ProvenanceError):
            SurrogateTrainer(leaked, self.images, self.labels, self.spec, plan=self.plan)

    def test_rs_cam_attack(self):
        """Test the full attack from predictions alone."""
        bundle = self.trainer().run()
        self.assertEqual(bundle.mode, "rs_cam")
        self.assertEqual(bundle.provenance["split_sha256"], self.plan.checksum())
        images = attack_nonexplainable_batch(bundle, self.breach.predictions[:5])
        self.assertEqual(images.shape, (5, 8, 8, 1))
        self.assertTrue(((images >= 0) & (images <= 1)).all())
        single = attack_nonexplainable(bundle, self.breach.tuple(0).prediction)
        self.assertIsInstance(single, ImageTensor)
        cam = reconstruct_surrogate_explanation(bundle, self.breach.predictions[0])
        self.assertEqual(cam.shape, (4, 4))
        self.assertTrue((cam.values >= 0).all())

    def test_s_cam_mode_skips_explanation_inverter(self):
        """Test that the s-CAM image inverter trains on surrogate CAMs directly."""
        trainer = self.trainer("s_cam")
        trainer.fit_surrogate_target()
        model = trainer.fit_image_inverter()
        self.assertEqual(model.spec.explanation_shape, (4, 4, 1))
        self.assertIn("image_inverter", trainer.logs)
        self.assertNotIn("explanation_inverter", trainer.logs)

    def test_scored_explanations_per_mode(self):
        """Test that the s_cam row is scored on true surrogate CAMs and the rs_cam row on reconstructed ones."""
        trainer = self.trainer()
        rs_bundle = trainer.run()
        trainer.mode = "s_cam"
        trainer.fit_image_inverter()
        s_bundle = trainer.bundle()
        index = self.breach.source_index[:5]
        predictions, images = self.breach.predictions[:5], self.images[index]

        fed_rs, rs_cams = evaluation_cams(rs_bundle, predictions, images)
        fed_s, s_cams = evaluation_cams(s_bundle, predictions, images)
        self.assertEqual((fed_rs, fed_s), ("rs_cam", "s_cam"))
        np.testing.assert_array_equal(rs_cams, reconstruct_cams(rs_bundle.explanation_inverter, predictions))
        np.testing.assert_array_equal(s_cams, surrogate_cams(s_bundle.surrogate_target, images))
        self.assertFalse(np.array_equal(rs_cams, s_cams))

        reconstructions, fed = invert_with_bundle(s_bundle, predictions, images)
        self.assertEqual(fed, "s_cam")
        np.testing.assert_array_equal(reconstructions, invert_batch(s_bundle.image_inverter, predictions, s_cams))
        reconstructions, fed = invert_with_bundle(rs_bundle, predictions, images)
        self.assertEqual(fed, "rs_cam")
        np.testing.assert_array_equal(reconstructions, attack_nonexplainable_batch(rs_bundle, predictions))
        with self.assertRaises(ConfigurationError):
            evaluation_cams(s_bundle, predictions)

    def test_bundle_persistence(self):
        """Test saving and loading a trained bundle."""
        bundle = self.trainer().run()
        with tempfile.TemporaryDirectory() as tmp:
            directory = save_bundle(bundle, Path(tmp) / "surrogate" / "rs_cam")
            self.assertTrue((directory / "manifest.json").exists())
            restored = load_bundle(directory)
        self.assertEqual(restored.mode, "rs_cam")
        predictions = self.breach.predictions[:3]
        np.testing.assert_array_equal(
            attack_nonexplainable_batch(restored, predictions), attack_nonexplainable_batch(bundle, predictions)
        )


class TestExplanationInverter(unittest.TestCase):
    """Tests for CAM reconstruction from predictions.

    Each class has its own 4x4 CAM template; predictions are confident in
    the class whose template produced the CAM.
    """

    def setUp(self):
        """Set up class templates and a trained explanation inverter."""
        self.templates = normalize_batch(np.random.default_rng(20).random((3, 4, 4)))
        predictions, self.train_cams = self.draw(60, seed=21)
        cfg = TrainingConfig(learning_rate=1e-2, batch_size=8, epochs=80, seed=0)
        self.inverter, self.log = train_explanation_inverter(
            predictions, self.train_cams, cfg, width_scale=0.0625, validation_fraction=0.0,
            output_activation="sigmoid",
        )

    def draw(self, count: int, seed: int):
        rng = np.random.default_rng(seed)
        labels = np.arange(count) % 3
        logits = rng.normal(size=(count, 3))
        logits[np.arange(count), labels] += 4.0
        predictions = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        cams = self.templates[labels][:, None] + 0.05 * rng.random((count, 1, 4, 4))
        return predictions, cams.astype(np.float32)

    def test_beats_zero_map(self):
        """Test that held-out rs-CAMs are closer to the s-CAMs than the all-zero map."""
        predictions, cams = self.draw(15, seed=22)
        targets = normalize_batch(cams)
        rs_cams = reconstruct_cams(self.inverter, predictions)
        self.assertEqual(rs_cams.shape, targets.shape)
        self.assertLess(float(((rs_cams - targets) ** 2).mean()), float((targets**2).mean()))

    def test_paired_correlation_beats_shuffled(self):
        """Test that an rs-CAM correlates more with its own s-CAM than with another instance's."""
        predictions, cams = self.draw(15, seed=23)
        rs_cams = reconstruct_cams(self.inverter, predictions)
        paired = [explanation_typicalness(rs_cams[i, 0], cams[i, 0]) for i in range(15)]
        shuffled = [explanation_typicalness(rs_cams[i, 0], cams[(i + 1) % 15, 0]) for i in range(15)]
        self.assertNotIn(None, paired + shuffled)
        self.assertGreater(np.mean(paired), np.mean(shuffled))

    def test_memorizes_single_pair(self):
        """Test that the inverter fits one (prediction, CAM) pair almost exactly."""
        predictions, cams = self.draw(1, seed=24)
        cfg = TrainingConfig(learning_rate=1e-2, batch_size=1, epochs=300, seed=0)
        inverter, _ = train_explanation_inverter(
            predictions, cams, cfg, width_scale=0.0625, validation_fraction=0.0, output_activation="sigmoid"
        )
        error = reconstruct_cams(inverter, predictions) - normalize_batch(cams)
        self.assertLess(float((error**2).mean()), 1e-3)


if __name__ == "__main__":
    unittest.main()
