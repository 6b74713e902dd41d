"""
Tests for dataset profiles, loading and the split protocol.
"""

import gzip
import tempfile
import unittest
from pathlib import Path

import numpy as np
from PIL import Image

from xai_inversion.core.config import DatasetSection
from xai_inversion.core.exceptions import ConfigurationError, DatasetLoadError, DatasetValidationError, SplitError
from xai_inversion.data.loader import (
    load_cached_collection,
    load_dataset,
    preprocess,
    preprocess_batch,
    read_idx,
    save_collection,
)
from xai_inversion.data.profiles import DatasetProfile, ImageTensor, get_profile, resolve_profile
from xai_inversion.data.splits import carve_validation, make_splits, split_sizes

from .fixtures import TINY_PROFILE, idx_bytes, synthetic_digits, write_idx_dataset


class TestProfiles(unittest.TestCase):
    """Tests for dataset profiles."""

    def test_builtin_profiles(self):
        """Test the geometry and sigma of the built-in profiles."""
        mnist = get_profile("mnist")
        self.assertEqual(mnist.image_shape, (32, 32, 1))
        self.assertEqual(mnist.attack_class_count, 10)
        icv = get_profile("icv_mefed")
        self.assertEqual(icv.image_shape, (128, 128, 1))
        self.assertEqual(icv.attack_class_count, 115)
        self.assertEqual(get_profile("celeba").ssim_sigma, 2.5)
        with self.assertRaises(ConfigurationError):
            get_profile("cifar")

    def test_resolve_custom_profile(self):
        """Test that a custom profile needs geometry keys."""
        with self.assertRaises(ConfigurationError):
            resolve_profile(DatasetSection(profile="faces"))
        profile = resolve_profile(DatasetSection(profile="faces", image_size=16, class_count=4, attack_class_count=7))
        self.assertEqual(profile.image_shape, (16, 16, 1))
        self.assertEqual(profile.label_kind, "attack")

    def test_resolve_builtin_override(self):
        """Test overriding geometry of a built-in profile."""
        profile = resolve_profile(DatasetSection(profile="mnist", image_size=16))
        self.assertEqual(profile.image_shape, (16, 16, 1))
        self.assertEqual(profile.class_count, 10)

    def test_invalid_profile(self):
        """Test profile invariants."""
        with self.assertRaises(ConfigurationError):
            DatasetProfile(name="x", image_size=(8, 8), channels=1, class_count=1)
        with self.assertRaises(ConfigurationError):
            DatasetProfile(name="x", image_size=(8, 8), channels=1, class_count=3, attack_class_count=5)

    def test_image_tensor_range(self):
        """Test that ImageTensor rejects out-of-range pixels."""
        with self.assertRaises(DatasetValidationError):
            ImageTensor(np.full((4, 4, 1), 1.5))
        with self.assertRaises(DatasetValidationError):
            ImageTensor(np.zeros((4, 4)))


class TestPreprocess(unittest.TestCase):
    """Tests for image preprocessing."""

    def setUp(self):
        """Set up a grayscale 8x8 profile."""
        self.profile = TINY_PROFILE

    def test_dynamic_range(self):
        """Test that 8-bit input is scaled to [0, 1]."""
        raw = np.full((8, 8), 255, dtype=np.uint8)
        image = preprocess(raw, self.profile)
        self.assertEqual(image.shape, (8, 8, 1))
        self.assertAlmostEqual(float(image.pixels.max()), 1.0)

    def test_rgb_to_gray_and_resize(self):
        """Test luma conversion and bilinear resizing."""
        raw = np.zeros((16, 16, 3), dtype=np.uint8)
        raw[..., 1] = 255
        image = preprocess(raw, self.profile)
        self.assertEqual(image.shape, (8, 8, 1))
        np.testing.assert_allclose(image.pixels, 0.587, atol=1e-5)

    def test_pil_input(self):
        """Test decoding a PIL image."""
        image = preprocess(Image.new("L", (8, 8), color=51), self.profile)
        np.testing.assert_allclose(image.pixels, 0.2, atol=1e-6)

    def test_not_an_image(self):
        """Test that non-image inputs are rejected."""
        with self.assertRaises(DatasetLoadError):
            preprocess(np.array(["a", "b"]), self.profile)
        with self.assertRaises(DatasetLoadError):
            preprocess_batch(np.zeros((0, 8, 8)), self.profile)


class TestLoading(unittest.TestCase):
    """Tests for dataset sources and the collection cache."""

    def setUp(self):
        """Set up a temporary directory and the MNIST profile."""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.profile = get_profile("mnist")

    def tearDown(self):
        self.tmp.cleanup()

    def test_read_idx(self):
        """Test IDX decoding, gzipped and plain."""
        array = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        plain = self.root / "a-idx3-ubyte"
        plain.write_bytes(idx_bytes(array))
        np.testing.assert_array_equal(read_idx(plain), array)
        packed = self.root / "b-idx3-ubyte.gz"
        packed.write_bytes(gzip.compress(idx_bytes(array)))
        np.testing.assert_array_equal(read_idx(packed), array)

    def test_truncated_idx(self):
        """Test that a truncated payload is reported."""
        path = self.root / "c-idx3-ubyte"
        path.write_bytes(idx_bytes(np.zeros((2, 3, 4), dtype=np.uint8))[:-1])
        with self.assertRaises(DatasetLoadError):
            read_idx(path)

    def test_load_idx_directory(self):
        """Test loading MNIST IDX files with a limit."""
        images, labels = synthetic_digits(30)
        source = write_idx_dataset(self.root / "mnist", images, labels)
        collection = load_dataset(self.profile, source, limit=20)
        self.assertEqual(len(collection), 20)
        self.assertEqual(collection.images.shape, (20, 32, 32, 1))
        np.testing.assert_array_equal(collection.labels, labels[:20])
        np.testing.assert_array_equal(collection.attack_labels, collection.labels)
        self.assertLessEqual(float(collection.images.max()), 1.0)

    def test_load_image_directory(self):
        """Test loading image files listed in labels.csv with attack labels."""
        source = self.root / "faces"
        source.mkdir()
        rows = ["filename,label,attack_label"]
        for i in range(4):
            Image.new("L", (10, 10), color=20 * i).save(source / f"{i}.png")
            rows.append(f"{i}.png,{i % 3},{i}")
        (source / "labels.csv").write_text("\n".join(rows) + "\n")
        profile = DatasetProfile(
            name="faces", image_size=(8, 8), channels=1, class_count=3, label_kind="attack", attack_class_count=5
        )
        collection = load_dataset(profile, source)
        self.assertEqual(collection.images.shape, (4, 8, 8, 1))
        np.testing.assert_array_equal(collection.attack_labels, [0, 1, 2, 3])

    def test_label_out_of_range(self):
        """Test that labels outside the profile are rejected."""
        source = self.root / "bad"
        source.mkdir()
        Image.new("L", (8, 8)).save(source / "0.png")
        (source / "labels.csv").write_text("filename,label\n0.png,7\n")
        with self.assertRaises(DatasetValidationError):
            load_dataset(TINY_PROFILE, source)

    def test_missing_and_empty_sources(self):
        """Test missing, empty and unlabelled sources."""
        with self.assertRaises(DatasetLoadError):
            load_dataset(self.profile, self.root / "absent")
        empty = self.root / "empty"
        empty.mkdir()
        with self.assertRaises(DatasetLoadError):
            load_dataset(self.profile, empty)
        Image.new("L", (8, 8)).save(empty / "0.png")
        with self.assertRaises(DatasetLoadError):
            load_dataset(self.profile, empty)

    def test_cache(self):
        """Test the collection cache and its checksum."""
        images, labels = synthetic_digits(12)
        collection = load_dataset(self.profile, write_idx_dataset(self.root / "mnist", images, labels))
        path = save_collection(collection, self.root / "cache" / "collection.npz")
        restored = load_cached_collection(path, self.profile)
        self.assertEqual(restored.checksum(), collection.checksum())
        with self.assertRaises(DatasetLoadError):
            load_cached_collection(path, TINY_PROFILE)


class TestSplits(unittest.TestCase):
    """Tests for the disjoint split protocol."""

    def test_sizes(self):
        """Test the 50/40/10 partition with rounding toward earlier partitions."""
        self.assertEqual(split_sizes(100), (50, 40, 10))
        self.assertEqual(split_sizes(11), (6, 4, 1))
        self.assertEqual(sum(split_sizes(37)), 37)

    def test_disjoint_and_complete(self):
        """Test that partitions are disjoint and cover the collection for many seeds."""
        for seed in range(100):
            plan = make_splits(53, seed)
            union = np.concatenate([plan.target_indices, plan.attack_train_indices, plan.attack_test_indices])
            self.assertEqual(len(np.unique(union)), 53)
            self.assertEqual(plan.size, 53)

    def test_deterministic(self):
        """Test that the same seed gives the same plan."""
        self.assertEqual(make_splits(40, 3).checksum(), make_splits(40, 3).checksum())
        self.assertNotEqual(make_splits(40, 3).checksum(), make_splits(40, 4).checksum())

    def test_partition_of(self):
        """Test index lookup by partition."""
        plan = make_splits(20, 0)
        for name in ("target", "attack_train", "attack_test"):
            for index in plan.indices(name):
                self.assertEqual(plan.partition_of(int(index)), name)
        with self.assertRaises(SplitError):
            plan.partition_of(20)
        with self.assertRaises(SplitError):
            plan.indices("validation")

    def test_too_small(self):
        """Test the minimum collection size."""
        with self.assertRaises(SplitError):
            make_splits(9, 0)

    def test_carve_validation(self):
        """Test the deterministic validation carve."""
        train, held = carve_validation(np.arange(30), 0.1, 5)
        self.assertEqual(len(held), 3)
        self.assertEqual(len(np.intersect1d(train, held)), 0)
        again = carve_validation(np.arange(30), 0.1, 5)
        np.testing.assert_array_equal(again[1], held)
        train, held = carve_validation(np.arange(5), 0.1, 0)
        self.assertEqual(len(held), 0)
        self.assertEqual(len(train), 5)


if __name__ == "__main__":
    unittest.main()
