"""GTSRB-layout ingestion and the PPM dataset cache.

A GTSRB directory holds per-class subfolders of P6 images, each annotated by
a semicolon-separated CSV::

    Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId

Filenames are relative to the CSV's folder. ROI corners are inclusive.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import CodecError, IngestionError
from .dataset import LabeledDataset
from .ppm import read_ppm, write_ppm

GTSRB_HEADER = ["Filename", "Width", "Height", "Roi.X1", "Roi.Y1", "Roi.X2", "Roi.Y2", "ClassId"]

# official class order; the seven classes used by the default scenarios carry
# the same names as the synthetic set
GTSRB_CLASS_NAMES = [
    "speed_20", "speed_30", "speed_50", "speed_60", "speed_70", "speed_80",
    "end_speed_80", "speed_100", "speed_120", "no_passing", "no_passing_trucks",
    "right_of_way", "priority_road", "yield", "stop", "no_vehicles", "no_trucks",
    "no_entry", "general_caution", "curve_left", "curve_right", "double_curve",
    "bumpy_road", "slippery_road", "road_narrows_right", "road_work",
    "traffic_signals", "pedestrians", "children_crossing", "bicycles_crossing",
    "ice_snow", "wild_animals", "end_all_limits", "right_turn", "left_turn",
    "ahead_only", "straight_or_right", "straight_or_left", "keep_right",
    "keep_left", "roundabout", "end_no_passing", "end_no_passing_trucks",
]


def resize_bilinear(image, out_h, out_w):
    """Corner-aligned bilinear resize of a ``(C, H, W)`` array."""
    c, h, w = image.shape
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    img = image.astype(np.float64)
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bottom = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)


def _parse_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != GTSRB_HEADER:
            raise IngestionError(f"{path}:1: expected header {';'.join(GTSRB_HEADER)}", path=str(path), line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(GTSRB_HEADER):
                raise IngestionError(f"{path}:{lineno}: expected {len(GTSRB_HEADER)} fields, got {len(row)}",
                                     path=str(path), line=lineno)
            try:
                nums = [int(v) for v in row[1:]]
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-integer field", path=str(path), line=lineno) from None
            rows.append((lineno, row[0].strip(), *nums))
    return rows


def load_gtsrb_format(dir_path, image_size=32, split="train", class_names=None) -> LabeledDataset:
    """Load every annotated PPM below ``dir_path``.

    Every ``.ppm`` found must be annotated and every annotation must point
    to an existing file; otherwise an ``IngestionError`` is raised rather
    than skipping anything. The returned dataset's ``info`` records the counts.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory", path=str(root))
    csvs = sorted(p for p in root.rglob("*.csv") if p.is_file())
    ppms = sorted(p.resolve() for p in root.rglob("*") if p.suffix.lower() == ".ppm" and p.is_file())
    if not csvs:
        raise IngestionError(f"{root}: no annotation CSV files found", path=str(root))
    images, labels, seen = [], [], set()
    for csv_path in csvs:
        for lineno, fname, width, height, x1, y1, x2, y2, class_id in _parse_csv(csv_path):
            img_path = (csv_path.parent / fname).resolve()
            where = f"{csv_path}:{lineno}"
            if not img_path.is_file():
                raise IngestionError(f"{where}: image {fname} not found", path=str(csv_path), line=lineno)
            if img_path in seen:
                raise IngestionError(f"{where}: image {fname} annotated twice", path=str(csv_path), line=lineno)
            seen.add(img_path)
            try:
                img = read_ppm(img_path)
            except CodecError as exc:
                raise CodecError(f"{where}: {exc}") from None
            _, h, w = img.shape
            if (w, h) != (width, height):
                raise IngestionError(f"{where}: header says {width}x{height}, image is {w}x{h}",
                                     path=str(csv_path), line=lineno)
            if not (0 <= x1 <= x2 < w and 0 <= y1 <= y2 < h):
                raise IngestionError(f"{where}: ROI ({x1},{y1})-({x2},{y2}) outside {w}x{h} image",
                                     path=str(csv_path), line=lineno)
            if class_id < 0:
                raise IngestionError(f"{where}: negative ClassId", path=str(csv_path), line=lineno)
            crop = img[:, y1:y2 + 1, x1:x2 + 1]
            images.append(np.clip(resize_bilinear(crop, image_size, image_size), 0.0, 1.0))
            labels.append(class_id)
    unannotated = [p for p in ppms if p not in seen]
    if unannotated:
        raise IngestionError(f"{len(unannotated)} image(s) without annotation, first: {unannotated[0]}",
                             path=str(unannotated[0]))
    if not images:
        raise IngestionError(f"{root}: annotation files list no images", path=str(root))
    if class_names is None:
        n = max(labels) + 1
        class_names = GTSRB_CLASS_NAMES if n <= len(GTSRB_CLASS_NAMES) else [f"class_{i}" for i in range(n)]
    if max(labels) >= len(class_names):
        raise IngestionError(f"ClassId {max(labels)} outside the class table")
    ds = LabeledDataset(np.stack(images), np.array(labels), class_names, split)
    ds.info = {"files_discovered": len(ppms), "images_loaded": len(images), "annotation_files": len(csvs)}
    return ds


def save_dataset_cache(ds: LabeledDataset, dir_path):
    """Write ``NNNNNN.ppm`` files, ``labels.csv`` (filename,label) and ``classes.txt``."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(len(ds))))
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "label"])
        for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
            name = f"{i:0{width}d}.ppm"
            write_ppm(root / name, img)
            writer.writerow([name, int(label)])
    (root / "classes.txt").write_text("\n".join(ds.class_names) + "\n", encoding="utf-8")


def load_dataset_cache(dir_path, split="test") -> LabeledDataset:
    root = Path(dir_path)
    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise IngestionError(f"{labels_path}: missing", path=str(labels_path))
    images, labels = [], []
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "label"]:
            raise IngestionError(f"{labels_path}:1: expected header filename,label", path=str(labels_path), line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise IngestionError(f"{labels_path}:{lineno}: expected 2 fields", path=str(labels_path), line=lineno)
            try:
                labels.append(int(row[1]))
            except ValueError:
                raise IngestionError(f"{labels_path}:{lineno}: bad label", path=str(labels_path), line=lineno) from None
            images.append(read_ppm(root / row[0]))
    classes_path = root / "classes.txt"
    if classes_path.is_file():
        class_names = classes_path.read_text(encoding="utf-8").split()
    else:
        class_names = [f"class_{i}" for i in range(max(labels) + 1)]
    if not images:
        raise IngestionError(f"{labels_path}: no images listed", path=str(labels_path))
    return LabeledDataset(np.stack(images), np.array(labels), class_names, split)
