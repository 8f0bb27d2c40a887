import numpy as np
import pytest

from fruitband.manifest import CaptureRecord, Manifest
from fruitband.synth import GenConfig, generate_dataset

# published reference accuracies used as report-formatting fixtures
REFERENCE_ACCURACIES = {
    "mobilenet_v1": {"single_nb": 98.8, "single_vis": 98.26, "multi_nb_mask": 75.14,
                     "multi_vis_mask": 69.85, "multi_nb_vis": 90.91},
    "densenet121": {"single_nb": 95.39, "single_vis": 98.46, "multi_nb_mask": 72.59,
                    "multi_vis_mask": 85.71, "multi_nb_vis": 76.70},
    "resnet50": {"single_nb": 95.79, "single_vis": 96.10, "multi_nb_mask": 35.63,
                 "multi_vis_mask": 52.87, "multi_nb_vis": 60.36},
    "vgg19": {"single_nb": 33.36, "single_vis": 33.22, "multi_nb_mask": 65.78,
              "multi_vis_mask": 66.04, "multi_nb_vis": 36.36},
}


def make_manifest(records, root=None) -> Manifest:
    return Manifest(records=list(records), root=root)


def make_record(fruit="f0", view=0, cls="bruise", suffix=""):
    return CaptureRecord(
        fruit_id=fruit,
        view_index=view,
        defect_class=cls,
        visible_path=f"{fruit}_{view}{suffix}_vis.png",
        narrowband_path=f"{fruit}_{view}{suffix}_nb.png",
        mask_path=f"{fruit}_{view}{suffix}_mask.png",
    )


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """2 fruits/class x 4 views at reduced resolution; shared across tests."""
    out = tmp_path_factory.mktemp("smallset")
    cfg = GenConfig(
        fruits_per_class=2,
        views_per_fruit=4,
        resolution=(128, 112),
        noise_sigma=0.02,
        severity_range=(0.7, 1.0),
        master_seed=7,
        output_dir=str(out),
    )
    manifest = generate_dataset(cfg)
    return cfg, manifest


def blob_dataset(n_per_class: int, seed: int, size: int = 64):
    """Three trivially separable classes of noisy Gaussian blobs."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    params = [(6.0, 0.35), (10.0, 0.65), (15.0, 0.95)]  # (radius, peak) per class
    for cls, (radius, peak) in enumerate(params):
        for _ in range(n_per_class):
            yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
            cx = size / 2 + rng.uniform(-6, 6)
            cy = size / 2 + rng.uniform(-6, 6)
            r2 = (xx - cx) ** 2 + (yy - cy) ** 2
            img = peak * np.exp(-r2 / (2 * radius ** 2))
            img = img + rng.normal(0, 0.02, (size, size)).astype(np.float32)
            images.append(np.repeat(np.clip(img, 0, 1)[..., None], 3, axis=2))
            labels.append(cls)
    images = np.stack(images).astype(np.float32)
    labels = np.array(labels, dtype=np.int64)
    perm = rng.permutation(len(labels))
    return images[perm], labels[perm]
