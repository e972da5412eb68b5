"""Image/label containers and raster + manifest round trips."""

import numpy as np
import pytest
from PIL import Image

from sensmix.core import (
    ClassSpace,
    ImageRgb,
    SampleManifest,
    SoftLabel,
    crop_to_multiple,
    load_image,
    quantize8,
    read_manifest,
    save_image,
    write_manifest,
)


def random_image(rng, h=16, w=16) -> ImageRgb:
    return ImageRgb(rng.random((h, w, 3)))


class TestImageRgb:
    def test_accepts_valid_pixels(self):
        img = ImageRgb(np.zeros((4, 5, 3)))
        assert (img.height, img.width) == (4, 5)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            ImageRgb(np.zeros((4, 5)))
        with pytest.raises(ValueError):
            ImageRgb(np.zeros((4, 5, 4)))
        with pytest.raises(ValueError):
            ImageRgb(np.zeros((0, 5, 3)))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ImageRgb(np.full((2, 2, 3), 1.5))
        with pytest.raises(ValueError):
            ImageRgb(np.full((2, 2, 3), -0.1))
        with pytest.raises(ValueError):
            ImageRgb(np.full((2, 2, 3), np.nan))

    def test_pixels_are_immutable(self):
        img = ImageRgb(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1.0


class TestClassSpace:
    def test_default_shape(self):
        cs = ClassSpace(tuple("abcdefgh"), 5)
        assert cs.num_classes == 41

    def test_reference_is_index_zero(self):
        cs = ClassSpace(("noise", "blur"), 5)
        assert cs.index_of(None) == 0
        assert cs.spec_at(0) is None

    def test_first_type_first_level_is_one(self):
        cs = ClassSpace(("noise", "blur"), 5)
        assert cs.index_of("noise", 1) == 1

    def test_index_roundtrip_all_classes(self):
        cs = ClassSpace(tuple("abcdefgh"), 5)
        for idx in range(cs.num_classes):
            spec = cs.spec_at(idx)
            got = cs.index_of(None) if spec is None else cs.index_of(*spec)
            assert got == idx

    def test_bad_level_rejected(self):
        cs = ClassSpace(("noise",), 5)
        with pytest.raises(ValueError):
            cs.index_of("noise", 0)
        with pytest.raises(ValueError):
            cs.index_of("noise", 6)

    def test_unknown_type_rejected(self):
        cs = ClassSpace(("noise",), 5)
        with pytest.raises(ValueError):
            cs.index_of("sharpen", 1)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            ClassSpace(("noise", "noise"), 5)


class TestSoftLabel:
    def test_one_hot(self):
        cs = ClassSpace(("a", "b"), 2)
        lab = SoftLabel.one_hot(3, cs)
        assert lab.probs[3] == 1.0 and lab.probs.sum() == 1.0

    def test_sum_must_be_one(self):
        cs = ClassSpace(("a",), 1)
        with pytest.raises(ValueError):
            SoftLabel(np.array([0.5, 0.4]), cs)

    def test_negative_rejected(self):
        cs = ClassSpace(("a",), 1)
        with pytest.raises(ValueError):
            SoftLabel(np.array([1.2, -0.2]), cs)

    def test_marginals_put_reference_first(self):
        """A joint label marginalizes to (n_types+1)- and (n_levels+1)-way
        vectors, each carrying the reference mass at position 0."""
        cs = ClassSpace(("a", "b"), 2)
        probs = np.array([0.1, 0.2, 0.3, 0.15, 0.25])
        type_m, level_m = SoftLabel(probs, cs).marginals()
        assert type_m == pytest.approx([0.1, 0.5, 0.4])
        assert level_m == pytest.approx([0.1, 0.35, 0.55])
        assert type_m.sum() == pytest.approx(1.0, abs=1e-12)
        assert level_m.sum() == pytest.approx(1.0, abs=1e-12)

    def test_reference_one_hot_marginals(self):
        cs = ClassSpace(("a", "b"), 2)
        type_m, level_m = SoftLabel.one_hot(0, cs).marginals()
        assert type_m[0] == 1.0 and level_m[0] == 1.0


class TestRasterIo:
    def test_black_png_loads_as_zeros(self, tmp_path):
        p = tmp_path / "black.png"
        Image.new("RGB", (2, 2), (0, 0, 0)).save(p)
        assert np.all(load_image(p).pixels == 0.0)

    def test_white_png_loads_as_ones(self, tmp_path):
        p = tmp_path / "white.png"
        Image.new("RGB", (2, 2), (255, 255, 255)).save(p)
        assert np.all(load_image(p).pixels == 1.0)

    def test_roundtrip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        img = quantize8(random_image(rng))
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        save_image(img, a)
        save_image(load_image(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_roundtrip_preserves_8bit_values(self, tmp_path):
        rng = np.random.default_rng(1)
        img = quantize8(random_image(rng))
        p = tmp_path / "x.png"
        save_image(img, p)
        assert np.array_equal(load_image(p).pixels, img.pixels)

    def test_grayscale_replicates_channels(self, tmp_path):
        p = tmp_path / "gray.png"
        Image.new("L", (3, 2), 128).save(p)
        px = load_image(p).pixels
        assert np.array_equal(px[:, :, 0], px[:, :, 1])
        assert np.array_equal(px[:, :, 0], px[:, :, 2])
        assert px[0, 0, 0] == 128 / 255

    def test_16bit_scaling(self, tmp_path):
        p = tmp_path / "deep.png"
        arr = np.full((2, 2), 65535, dtype=np.uint16)
        Image.fromarray(arr).save(p)
        assert np.all(load_image(p).pixels == 1.0)

    def test_quantize8_idempotent(self):
        rng = np.random.default_rng(2)
        img = random_image(rng)
        once = quantize8(img)
        assert np.array_equal(quantize8(once).pixels, once.pixels)


class TestCropToMultiple:
    def test_17x9_to_16x8(self):
        img = ImageRgb(np.zeros((9, 17, 3)))
        out = crop_to_multiple(img, 8)
        assert (out.height, out.width) == (8, 16)

    def test_exact_multiple_unchanged(self):
        img = ImageRgb(np.zeros((224, 224, 3)))
        assert crop_to_multiple(img, 8) is img

    def test_13x13_center_region(self):
        # index-arithmetic oracle: offset floor((13-8)/2) = 2 on both axes
        base = np.arange(13 * 13 * 3, dtype=np.float64).reshape(13, 13, 3)
        img = ImageRgb(base / base.max())
        out = crop_to_multiple(img, 8)
        assert np.array_equal(out.pixels, img.pixels[2:10, 2:10, :])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        img = random_image(rng, 21, 30)
        once = crop_to_multiple(img, 8)
        assert crop_to_multiple(once, 8) is once

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            crop_to_multiple(ImageRgb(np.zeros((4, 20, 3))), 8)


class TestManifest:
    def sample(self) -> SampleManifest:
        cs = ClassSpace(("noise", "blur"), 2)
        probs = np.zeros(5)
        probs[1], probs[3] = 0.75, 0.25
        return SampleManifest(
            sample_id="mix-0001",
            source_ids=("a", "b"),
            mask_rects=((1, 2, 3, 4),),
            lambdas=(0.75, 0.25),
            label=SoftLabel(probs, cs),
            seed=99,
            distortion_meta=({"dtype": "noise", "level": 1}, {"dtype": "blur", "level": 1}),
        )

    def test_json_roundtrip(self):
        rec = self.sample()
        back = SampleManifest.from_json_obj(rec.to_json_obj())
        assert back.sample_id == rec.sample_id
        assert back.source_ids == rec.source_ids
        assert back.mask_rects == rec.mask_rects
        assert back.lambdas == rec.lambdas
        assert back.seed == rec.seed
        assert back.distortion_meta == rec.distortion_meta
        assert np.array_equal(back.label.probs, rec.label.probs)

    def test_key_order_is_stable(self):
        keys = list(self.sample().to_json_obj().keys())
        assert keys == ["sample_id", "source_ids", "mask_rects", "lambdas", "label", "seed", "distortion_meta"]

    def test_lambda_source_mismatch_rejected(self):
        rec = self.sample()
        with pytest.raises(ValueError):
            SampleManifest(
                sample_id="x",
                source_ids=("a",),
                mask_rects=(),
                lambdas=(0.5, 0.5),
                label=rec.label,
                seed=0,
            )

    def test_lambda_sum_enforced(self):
        rec = self.sample()
        with pytest.raises(ValueError):
            SampleManifest(
                sample_id="x",
                source_ids=("a", "b"),
                mask_rects=(),
                lambdas=(0.5, 0.4),
                label=rec.label,
                seed=0,
            )

    def test_jsonl_file_roundtrip(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        recs = [self.sample()]
        assert write_manifest(path, recs) == 1
        back = list(read_manifest(path))
        assert len(back) == 1
        assert back[0].to_json_obj() == recs[0].to_json_obj()
