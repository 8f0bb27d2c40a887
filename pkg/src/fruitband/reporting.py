"""Render experiment accuracies as fixed-layout tables (text or CSV).

Three layouts mirror the experiment families: single-input spectra,
multi-input spectrum + mask, and multi-input spectrum + spectrum. Output is
byte-stable: fixed column order per layout, fixed model row order
(MobileNetV1, DenseNet121, ResNet50, VGG19, then extras alphabetically),
accuracies rendered to two decimals with half-up rounding, missing cells
as an em dash.
"""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal

from .errors import UnknownLayout
from .evaluation import ExperimentResult

DISPLAY_NAMES = {
    "mobilenet_v1": "MobileNetV1",
    "densenet121": "DenseNet121",
    "resnet50": "ResNet50",
    "vgg19": "VGG19",
    "tiny": "Tiny",
}

CANONICAL_ROW_ORDER = ("MobileNetV1", "DenseNet121", "ResNet50", "VGG19")

LAYOUTS = {
    "table1": (
        ("single_nb", "660 nm spectrum (%)"),
        ("single_vis", "Visible spectrum (%)"),
    ),
    "table2": (
        ("multi_nb_mask", "660 nm spectrum + defect masks (%)"),
        ("multi_vis_mask", "Visible spectrum + defect masks (%)"),
    ),
    "table3": (
        ("multi_nb_vis", "660 nm + visible spectrum (%)"),
    ),
}

MISSING_CELL = "—"  # em dash


def _display_name(model: str) -> str:
    return DISPLAY_NAMES.get(model, model)


def _format_accuracy(value: float) -> str:
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _normalize(results) -> dict[str, dict[str, float]]:
    """Accept ExperimentResult lists, (model, arm, acc) triples, or nested dicts."""
    cells: dict[str, dict[str, float]] = {}
    if isinstance(results, dict):
        for model, arms in results.items():
            cells.setdefault(_display_name(model), {}).update(
                {arm: float(acc) for arm, acc in arms.items()}
            )
        return cells
    for entry in results:
        if isinstance(entry, ExperimentResult):
            model, arm, acc = entry.model_name, entry.arm, entry.accuracy_pct
        else:
            model, arm, acc = entry
        cells.setdefault(_display_name(model), {})[arm] = float(acc)
    return cells


def _row_order(cells: dict[str, dict[str, float]]) -> list[str]:
    present = set(cells)
    rows = [name for name in CANONICAL_ROW_ORDER if name in present]
    rows += sorted(present - set(CANONICAL_ROW_ORDER), key=str.lower)
    return rows


def emit_table(results, layout: str, format: str = "text") -> str:
    """Render results for a layout; a pure function of its inputs."""
    if layout not in LAYOUTS:
        raise UnknownLayout(f"unknown layout {layout!r}, expected one of {tuple(LAYOUTS)}")
    if format not in ("text", "csv"):
        raise UnknownLayout(f"unknown format {format!r}, expected 'text' or 'csv'")
    columns = LAYOUTS[layout]
    cells = _normalize(results)

    sep = "," if format == "csv" else " | "
    lines = [sep.join(["Model"] + [header for _, header in columns])]
    for model in _row_order(cells):
        row = [model]
        for arm, _ in columns:
            value = cells[model].get(arm)
            row.append(MISSING_CELL if value is None else _format_accuracy(value))
        lines.append(sep.join(row))
    return "\n".join(lines) + "\n"
