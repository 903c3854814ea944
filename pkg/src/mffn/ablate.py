"""Ablation grids: view combinations x attention stages, and the channel
fusion on/off comparison. Each grid cell trains a model under its own
configuration and reports the validation measures as one CSV row."""

from __future__ import annotations

import csv
from pathlib import Path

from .config import build_train_config
from .data import DatasetSpec
from .model import TINY_CLOSE_RATIOS
from .train import train
from .views import ViewKind

# Distance ratios per profile; tiny sizes must stay divisible by 32 at 96 px.
RATIOS = {
    "full": {"close": (1.5, 2.0), "far": 0.5},
    "tiny": {"close": TINY_CLOSE_RATIOS, "far": 2.0 / 3.0},
}

COMBO_PARTS = {
    "V-O": (),
    "V-F": ("far",),
    "V-C": ("close",),
    "V-A": ("angle",),
    "V-P": ("persp",),
    "V-F&C": ("far", "close"),
    "V-A&F": ("angle", "far"),
    "V-C&P": ("close", "persp"),
    "V-A&P": ("angle", "persp"),
    "V-A&C": ("angle", "close"),
}

_SINGLES = ("V-F", "V-C", "V-A")
_PAIRS = ("V-F&C", "V-A&F", "V-C&P", "V-A&P", "V-A&C")

GRIDS = {
    # view-combination sweeps; the second sweep omits the plain baseline row
    "table3": [("V-O", None, True)]
    + [(v, "one-stage", True) for v in _SINGLES]
    + [(v, stage, True) for v in _PAIRS for stage in ("one-stage", "two-stage")],
    "table4": [(v, "one-stage", True) for v in _SINGLES]
    + [(v, stage, True) for v in _PAIRS for stage in ("one-stage", "two-stage")],
    # channel-fusion on/off at the winning configuration
    "table5": [("V-A&C", "two-stage", False), ("V-A&C", "two-stage", True)],
}

CSV_COLUMNS = ["view", "camv", "cfu", "s_measure", "f_beta_weighted", "mae", "f_beta", "e_measure"]


def view_combo(name: str, profile: str) -> list:
    """The view list for a grid row label such as ``V-A&C``."""
    if name not in COMBO_PARTS:
        raise ValueError(f"unknown view combination {name!r}")
    ratios = RATIOS[profile]
    views = [ViewKind.original()]
    for part in COMBO_PARTS[name]:
        if part == "angle":
            views += [ViewKind.diagonal_flip(), ViewKind.vertical_flip()]
        elif part == "close":
            views += [ViewKind.close(r) for r in ratios["close"]]
        elif part == "far":
            views.append(ViewKind.far(ratios["far"]))
        elif part == "persp":
            views.append(ViewKind.perspective())
    return views


def run_ablation(grid: str, data_root, out_csv, profile="tiny", seed=0,
                 epochs=None, max_steps=None, log=print) -> list:
    """Train and evaluate every cell of a grid; writes and returns the rows."""
    if grid not in GRIDS:
        raise ValueError(f"unknown grid {grid!r}; choose from {sorted(GRIDS)}")
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, (combo, stage, cfu) in enumerate(GRIDS[grid]):
        cfg = build_train_config(
            profile,
            views=view_combo(combo, profile),
            camv_stage2=(stage == "two-stage"),
            cfu_enabled=cfu,
            seed=seed,
            epochs=epochs,
            max_steps=max_steps,
        )
        cell_dir = out_csv.parent / f"{grid}_cell{idx:02d}"
        result = train(cfg, DatasetSpec(data_root), out_dir=cell_dir)
        report = result.history.entries[-1][1]
        row = {
            "view": combo,
            "camv": stage or "--",
            "cfu": "on" if cfu else "off",
            **{k: round(v, 4) for k, v in report.scalars().items()},
        }
        rows.append(row)
        log(f"[{grid} {idx + 1}/{len(GRIDS[grid])}] {combo} {row['camv']} cfu={row['cfu']} "
            f"S={row['s_measure']:.3f} MAE={row['mae']:.3f}")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
