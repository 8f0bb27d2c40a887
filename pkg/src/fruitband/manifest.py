"""Manifest-based index of paired-spectrum captures.

A manifest is a single JSON document listing capture records (visible +
narrowband image pair, optional defect mask, fruit id, view index, class
label). Paths inside the file are relative to the manifest's directory.
Splitting is done at the fruit level: all rotation views of one fruit are
near-duplicates, so record-level splits would leak.
"""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DegenerateSplit, ManifestNotFound, ManifestParseError

DEFECT_CLASSES = ("bruise", "stain", "rot")


@dataclass(frozen=True)
class CaptureRecord:
    fruit_id: str
    view_index: int
    defect_class: str
    visible_path: str
    narrowband_path: str
    mask_path: str | None = None


@dataclass
class Manifest:
    records: list[CaptureRecord]
    class_names: tuple[str, ...] = DEFECT_CLASSES
    # directory the record paths are relative to; not part of the document
    root: Path | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, rel_path: str) -> Path:
        if self.root is None:
            return Path(rel_path)
        return self.root / rel_path

    def fruit_ids(self) -> list[str]:
        return sorted({r.fruit_id for r in self.records})


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.2
    seed: int = 42


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    message: str
    record_indices: tuple[int, ...]


def _parse_record(obj: dict, index: int, class_names: tuple[str, ...]) -> CaptureRecord:
    try:
        fruit_id = obj["fruit_id"]
        view_index = obj["view_index"]
        defect_class = obj["defect_class"]
        visible_path = obj["visible_path"]
        narrowband_path = obj["narrowband_path"]
        mask_path = obj.get("mask_path")
    except KeyError as exc:
        raise ManifestParseError(f"record {index}: missing field {exc}") from exc
    if not isinstance(fruit_id, str) or not fruit_id:
        raise ManifestParseError(f"record {index}: fruit_id must be a non-empty string")
    if not isinstance(view_index, int) or isinstance(view_index, bool) or view_index < 0:
        raise ManifestParseError(f"record {index}: view_index must be an integer >= 0")
    if defect_class not in class_names:
        raise ManifestParseError(
            f"record {index}: unknown class {defect_class!r} (expected one of {list(class_names)})"
        )
    for key, value in (("visible_path", visible_path), ("narrowband_path", narrowband_path)):
        if not isinstance(value, str) or not value:
            raise ManifestParseError(f"record {index}: {key} must be a non-empty string")
    if mask_path is not None and (not isinstance(mask_path, str) or not mask_path):
        raise ManifestParseError(f"record {index}: mask_path must be a string or null")
    return CaptureRecord(fruit_id, view_index, defect_class, visible_path, narrowband_path, mask_path)


def load_manifest(path: str | Path) -> Manifest:
    """Load a manifest JSON file; record order follows the file."""
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFound(str(path))
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "records" not in doc:
        raise ManifestParseError(f"{path}: expected an object with a 'records' array")
    class_names = tuple(doc.get("class_names", DEFECT_CLASSES))
    if len(class_names) != 3 or len(set(class_names)) != 3:
        raise ManifestParseError(f"{path}: class_names must be 3 distinct names")
    raw_records = doc["records"]
    if not isinstance(raw_records, list):
        raise ManifestParseError(f"{path}: 'records' must be an array")
    records = [_parse_record(obj, i, class_names) for i, obj in enumerate(raw_records)]
    return Manifest(records=records, class_names=class_names, root=path.parent)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write the manifest as canonical JSON (stable field order, 2-space indent)."""
    doc = {
        "class_names": list(manifest.class_names),
        "records": [
            {
                "fruit_id": r.fruit_id,
                "view_index": r.view_index,
                "defect_class": r.defect_class,
                "visible_path": r.visible_path,
                "narrowband_path": r.narrowband_path,
                "mask_path": r.mask_path,
            }
            for r in manifest.records
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def validate_manifest(manifest: Manifest, require_masks: bool = False) -> list[ValidationIssue]:
    """Check a manifest against the filesystem; returns issues, never raises.

    An empty result means every referenced file exists, no
    (fruit_id, view_index, defect_class) triple repeats, and masks are
    present when required.
    """
    issues: list[ValidationIssue] = []
    for i, rec in enumerate(manifest.records):
        if rec.visible_path == rec.narrowband_path:
            issues.append(ValidationIssue(
                "identical_paths",
                f"record {i}: visible_path equals narrowband_path ({rec.visible_path})",
                (i,),
            ))
        for kind, rel in (("visible", rec.visible_path), ("narrowband", rec.narrowband_path)):
            if not manifest.resolve(rel).is_file():
                issues.append(ValidationIssue(
                    "missing_file", f"record {i}: {kind} file not found: {rel}", (i,)
                ))
        if rec.mask_path is not None:
            if not manifest.resolve(rec.mask_path).is_file():
                issues.append(ValidationIssue(
                    "missing_file", f"record {i}: mask file not found: {rec.mask_path}", (i,)
                ))
        elif require_masks:
            issues.append(ValidationIssue(
                "missing_mask", f"record {i}: mask required but not set", (i,)
            ))

    by_triple: dict[tuple[str, int, str], list[int]] = defaultdict(list)
    for i, rec in enumerate(manifest.records):
        by_triple[(rec.fruit_id, rec.view_index, rec.defect_class)].append(i)
    for triple, indices in by_triple.items():
        if len(indices) > 1:
            issues.append(ValidationIssue(
                "duplicate_triple",
                f"records {indices}: duplicate (fruit_id, view_index, class) {triple}",
                tuple(indices),
            ))
    return issues


def split_grouped(manifest: Manifest, spec: SplitSpec) -> tuple[Manifest, Manifest]:
    """Split by fruit_id so no fruit straddles train/val.

    Validation fruits are the first round(val_fraction * n_fruits) ids of a
    seeded shuffle of the sorted fruit-id list, clamped to [1, n_fruits - 1].
    """
    if not 0 <= spec.val_fraction < 1:
        raise DegenerateSplit(f"val_fraction must be in [0, 1), got {spec.val_fraction}")
    if spec.val_fraction == 0:
        return (
            Manifest(list(manifest.records), manifest.class_names, manifest.root),
            Manifest([], manifest.class_names, manifest.root),
        )
    fruits = manifest.fruit_ids()
    if len(fruits) < 2:
        raise DegenerateSplit(
            f"need >= 2 distinct fruit ids to split, found {len(fruits)}"
        )
    n_val = int(spec.val_fraction * len(fruits) + 0.5)
    n_val = max(1, min(n_val, len(fruits) - 1))
    shuffled = list(fruits)
    random.Random(spec.seed).shuffle(shuffled)
    val_fruits = set(shuffled[:n_val])
    train_records = [r for r in manifest.records if r.fruit_id not in val_fruits]
    val_records = [r for r in manifest.records if r.fruit_id in val_fruits]
    return (
        Manifest(train_records, manifest.class_names, manifest.root),
        Manifest(val_records, manifest.class_names, manifest.root),
    )


def class_distribution(manifest: Manifest) -> dict[str, int]:
    """Record count per class (all manifest classes included, zeros kept)."""
    counts = {name: 0 for name in manifest.class_names}
    for rec in manifest.records:
        counts[rec.defect_class] += 1
    return counts


def rebase_manifest(manifest: Manifest, new_root: Path) -> Manifest:
    """Re-express record paths relative to a different directory."""
    import os

    if manifest.root is None:
        raise ValueError("manifest has no root to rebase from")

    def rel(p: str | None) -> str | None:
        if p is None:
            return None
        return Path(os.path.relpath(manifest.resolve(p), new_root)).as_posix()

    records = [
        replace(
            r,
            visible_path=rel(r.visible_path),
            narrowband_path=rel(r.narrowband_path),
            mask_path=rel(r.mask_path),
        )
        for r in manifest.records
    ]
    return Manifest(records, manifest.class_names, new_root)
