import numpy as np
import pytest

from fruitband.imio import load_png
from fruitband.manifest import DEFECT_CLASSES, load_manifest, validate_manifest
from fruitband.spectra import HEALTHY_SKIN, NARROWBAND_660, sample_intensity
from fruitband.synth import (
    FruitScene,
    GenConfig,
    build_scene,
    expected_counts,
    generate_dataset,
    render_view,
)


class TestRenderView:
    def test_defect_free_fruit_pixels_match_band_sample(self):
        scene = FruitScene("plain", HEALTHY_SKIN, (), rng_seed=11)
        img, mask = render_view(scene, 0.0, "band", noise_sigma=0.0)
        assert mask.sum() == 0
        expected = sample_intensity(HEALTHY_SKIN, NARROWBAND_660)
        fruit = img[img > 30].astype(np.float64) / 255.0
        assert fruit.size > 0
        assert np.abs(fruit - expected).max() <= 1.0 / 255.0

    def test_deterministic_rerender(self):
        scene = build_scene("stain", 0, master_seed=3)
        a_img, a_mask = render_view(scene, 72.0, "band", 0.05)
        b_img, b_mask = render_view(scene, 72.0, "band", 0.05)
        assert np.array_equal(a_img, b_img)
        assert np.array_equal(a_mask, b_mask)

    def test_modes_have_expected_shapes(self):
        scene = build_scene("rot", 1, master_seed=3)
        nb, mask = render_view(scene, 0.0, "band", 0.02, resolution=(128, 112))
        vis, _ = render_view(scene, 0.0, "visible", 0.02, resolution=(128, 112))
        assert nb.shape == (112, 128) and nb.dtype == np.uint8
        assert vis.shape == (112, 128, 3)
        assert set(np.unique(mask)) <= {0, 255}

    def test_mask_nonempty_iff_defect_visible(self):
        for cls in DEFECT_CLASSES:
            scene = build_scene(cls, 0, master_seed=5)
            for view in range(8):
                angle = 45.0 * view
                _, mask = render_view(scene, angle, "band", 0.0, resolution=(128, 112))
                visible = any(
                    abs((d.region.azimuth_deg - angle + 180.0) % 360.0 - 180.0) < 90.0
                    for d in scene.defects
                )
                assert (mask.sum() > 0) == visible

    def test_defect_margin_grows_with_severity(self):
        margins = []
        for severity in (0.25, 0.5, 1.0):
            scene = build_scene("rot", 0, master_seed=9, severity_range=(severity, severity))
            img, mask = render_view(scene, 0.0, "band", 0.0)
            inside = img[mask > 0].mean() / 255.0
            outside = img[(mask == 0) & (img > 30)].mean() / 255.0
            margins.append(abs(outside - inside))
        assert margins[0] < margins[1] < margins[2]

    def test_rejects_bad_mode(self):
        scene = build_scene("rot", 0, master_seed=1)
        with pytest.raises(ValueError):
            render_view(scene, 0.0, "infrared", 0.0)


class TestGenerateDataset:
    def test_small_dataset_counts_and_layout(self, small_dataset):
        cfg, manifest = small_dataset
        assert len(manifest) == 24
        per_class = {c: 0 for c in DEFECT_CLASSES}
        for rec in manifest.records:
            per_class[rec.defect_class] += 1
            assert rec.narrowband_path.endswith("_nb.png")
            assert rec.visible_path.startswith(f"{rec.defect_class}/{rec.fruit_id}/")
        assert per_class == {"bruise": 8, "stain": 8, "rot": 8}
        assert validate_manifest(manifest) == []
        reloaded = load_manifest(manifest.resolve("manifest.json"))
        assert reloaded.records == manifest.records

    def test_image_formats_on_disk(self, small_dataset):
        _, manifest = small_dataset
        rec = manifest.records[0]
        vis = load_png(manifest.resolve(rec.visible_path))
        nb = load_png(manifest.resolve(rec.narrowband_path))
        mask = load_png(manifest.resolve(rec.mask_path))
        assert vis.ndim == 3 and vis.shape[2] == 3
        assert nb.ndim == 2
        assert set(np.unique(mask)) <= {0, 255}

    def test_capture_session_profile_counts(self):
        cfg = GenConfig(fruits_per_class={"bruise": 6, "stain": 20, "rot": 20},
                        views_per_fruit=120)
        assert expected_counts(cfg) == {"bruise": 720, "stain": 2400, "rot": 2400}

    def test_regeneration_is_byte_identical(self, tmp_path):
        cfg_a = GenConfig(fruits_per_class=1, views_per_fruit=2, resolution=(96, 84),
                          master_seed=13, output_dir=str(tmp_path / "a"))
        cfg_b = GenConfig(fruits_per_class=1, views_per_fruit=2, resolution=(96, 84),
                          master_seed=13, output_dir=str(tmp_path / "b"))
        man_a = generate_dataset(cfg_a)
        man_b = generate_dataset(cfg_b)
        assert man_a.records == man_b.records
        assert (tmp_path / "a" / "manifest.json").read_text() \
            == (tmp_path / "b" / "manifest.json").read_text()
        for rec in man_a.records:
            for rel in (rec.visible_path, rec.narrowband_path, rec.mask_path):
                assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path):
        base = dict(fruits_per_class=1, views_per_fruit=2, resolution=(96, 84), master_seed=31)
        man_serial = generate_dataset(GenConfig(**base, output_dir=str(tmp_path / "serial")),
                                      jobs=1)
        man_pool = generate_dataset(GenConfig(**base, output_dir=str(tmp_path / "pool")),
                                    jobs=2)
        assert man_serial.records == man_pool.records
        for rec in man_serial.records:
            for rel in (rec.visible_path, rec.narrowband_path, rec.mask_path):
                assert (tmp_path / "serial" / rel).read_bytes() \
                    == (tmp_path / "pool" / rel).read_bytes()

    def test_masks_lie_inside_silhouette(self):
        for cls in DEFECT_CLASSES:
            scene = build_scene(cls, 0, master_seed=17)
            bare = FruitScene(scene.fruit_id, scene.base_curve, (), scene.rng_seed)
            for angle in (0.0, 90.0, 210.0):
                _, mask = render_view(scene, angle, "band", 0.0)
                silhouette, _ = render_view(bare, angle, "band", 0.0)
                # every mask pixel must land on the fruit, never on background
                assert np.all(silhouette[mask > 0] > 30)
