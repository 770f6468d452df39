"""File formats: score-tensor manifests, report outputs, dataset CSVs.

Score tensors are stored long-format (one row per sample/model pair) next to
a JSON manifest. Report CSVs use 12 significant digits; summary.json keeps
full float precision so scalars round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from rkit.errors import ValidationError
from rkit.explorer import Dataset
from rkit.metrics import MetricsReport, ScoreTensor
from rkit.reduction import GreedySelection, ReductionResult

FORMAT_VERSION = 1
PathLike = Union[str, os.PathLike]


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def save_score_tensor(
    tensor: ScoreTensor, out_dir: PathLike, meta: Optional[dict] = None, stem: str = ""
) -> Path:
    """Write scores CSV, optional loss CSV and manifest; return the manifest path."""
    out = Path(out_dir)
    prefix = f"{stem}_" if stem else ""
    score_name, loss_name = f"{prefix}scores.csv", f"{prefix}losses.csv"
    header = ["sample_id", "model_id"] + [f"class_{k}" for k in range(tensor.c)]
    rows = (
        [sid, mid] + [repr(float(v)) for v in tensor.scores[i, j]]
        for i, sid in enumerate(tensor.sample_ids)
        for j, mid in enumerate(tensor.model_ids)
    )
    _atomic_write(out / score_name, _csv_text(header, rows))
    manifest = {
        "format_version": FORMAT_VERSION,
        "n": tensor.n,
        "m": tensor.m,
        "c": tensor.c,
        "model_ids": list(tensor.model_ids),
        "sample_ids": list(tensor.sample_ids),
        "score_file": score_name,
        "loss_file": None,
    }
    if tensor.model_losses is not None:
        loss_rows = ([mid, repr(float(v))] for mid, v in zip(tensor.model_ids, tensor.model_losses))
        _atomic_write(out / loss_name, _csv_text(["model_id", "loss"], loss_rows))
        manifest["loss_file"] = loss_name
    if meta:
        manifest["meta"] = meta
    path = out / f"{prefix}manifest.json"
    _atomic_write(path, _json_text(manifest))
    return path


def _read_manifest(path: Path) -> dict:
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    required = ("format_version", "n", "m", "c", "model_ids", "sample_ids", "score_file")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise ValidationError(f"{path}: manifest lacks {', '.join(missing)}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format_version {manifest['format_version']!r}")
    n, m, c = manifest["n"], manifest["m"], manifest["c"]
    if len(manifest["model_ids"]) != m or len(manifest["sample_ids"]) != n or c < 2:
        raise ValidationError(f"{path}: counts n={n}, m={m}, c={c} disagree with the id lists")
    return manifest


def load_score_tensor(manifest_path: PathLike) -> ScoreTensor:
    """Parse a manifest and its CSVs into a clipped, validated ScoreTensor."""
    path = Path(manifest_path)
    manifest = _read_manifest(path)
    n, m, c = manifest["n"], manifest["m"], manifest["c"]
    sample_ids = [str(s) for s in manifest["sample_ids"]]
    model_ids = [str(s) for s in manifest["model_ids"]]
    s_index = {s: i for i, s in enumerate(sample_ids)}
    m_index = {s: j for j, s in enumerate(model_ids)}
    if len(s_index) != n or len(m_index) != m:
        raise ValidationError(f"{path}: duplicate ids in manifest")

    score_path = path.parent / manifest["score_file"]
    scores = np.full((n, m, c), np.nan)
    seen = np.zeros((n, m), dtype=bool)
    expected = ["sample_id", "model_id"] + [f"class_{k}" for k in range(c)]
    with open(score_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ValidationError(f"{score_path}: header {header} != {expected}")
        for line, row in enumerate(reader, start=2):
            if len(row) != c + 2:
                raise ValidationError(f"{score_path}:{line}: expected {c + 2} fields, got {len(row)}")
            sid, mid = row[0], row[1]
            if sid not in s_index or mid not in m_index:
                raise ValidationError(f"{score_path}:{line}: unknown pair ({sid}, {mid})")
            i, j = s_index[sid], m_index[mid]
            if seen[i, j]:
                raise ValidationError(f"{score_path}:{line}: duplicate pair ({sid}, {mid})")
            try:
                vals = [float(v) for v in row[2:]]
            except ValueError:
                raise ValidationError(f"{score_path}:{line}: non-numeric score") from None
            total = math.fsum(vals)
            if not (0.99 <= total <= 1.01) or min(vals) < 0:
                raise ValidationError(
                    f"{score_path}:{line}: scores not normalized for ({sid}, {mid}) (sum {total!r}); logits?"
                )
            scores[i, j] = vals
            seen[i, j] = True
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise ValidationError(f"{score_path}: missing scores for ({sample_ids[i]}, {model_ids[j]})")

    losses = None
    if manifest.get("loss_file"):
        loss_path = path.parent / manifest["loss_file"]
        losses = np.full(m, np.nan)
        with open(loss_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["model_id", "loss"]:
                raise ValidationError(f"{loss_path}: header must be model_id,loss")
            for line, row in enumerate(reader, start=2):
                if len(row) != 2 or row[0] not in m_index:
                    raise ValidationError(f"{loss_path}:{line}: bad row {row}")
                j = m_index[row[0]]
                if not np.isnan(losses[j]):
                    raise ValidationError(f"{loss_path}:{line}: duplicate model {row[0]}")
                try:
                    losses[j] = float(row[1])
                except ValueError:
                    raise ValidationError(f"{loss_path}:{line}: non-numeric loss") from None
        if np.isnan(losses).any():
            raise ValidationError(f"{loss_path}: missing loss for model {model_ids[int(np.argmax(np.isnan(losses)))]}")
    return ScoreTensor.from_raw(scores, model_ids, sample_ids, losses)


def save_report(report: MetricsReport, out_dir: PathLike) -> dict:
    """Write summary.json, per_sample.csv and cdf.csv; return their paths."""
    out = Path(out_dir)
    summary = {
        "ambiguity": report.ambiguity,
        "discrepancy": report.discrepancy,
        "tail_mean_1pct": report.tail_mean_1pct,
        "tail_mean_5pct": report.tail_mean_5pct,
        "tail_stderr_1pct": report.tail_stderr_1pct,
        "tail_stderr_5pct": report.tail_stderr_5pct,
        "mean_capacity_bits": report.mean_capacity,
        "mean_m_c": report.mean_m_c,
        "n": len(report.sample_ids),
        "rashomon_model_ids": list(report.rashomon_model_ids),
        "base_model": report.base_model_id,
        "config": report.config,
    }
    paths = {
        "summary": out / "summary.json",
        "per_sample": out / "per_sample.csv",
        "cdf": out / "cdf.csv",
    }
    _atomic_write(paths["summary"], _json_text(summary))
    per_rows = (
        [sid, _fmt(cap), _fmt(mc)]
        for sid, cap, mc in zip(report.sample_ids, report.per_sample_capacity, report.per_sample_m_c)
    )
    _atomic_write(paths["per_sample"], _csv_text(["sample_id", "capacity_bits", "m_c"], per_rows))
    cdf_rows = ([_fmt(v), _fmt(f)] for v, f in report.cdf_points)
    _atomic_write(paths["cdf"], _csv_text(["capacity_bits", "cumulative_fraction"], cdf_rows))
    return paths


def write_summary(summary: dict, path: PathLike) -> Path:
    path = Path(path)
    _atomic_write(path, _json_text(summary))
    return path


def write_cdf(cdf_points, path: PathLike) -> Path:
    path = Path(path)
    _atomic_write(path, _csv_text(["capacity_bits", "cumulative_fraction"], ([_fmt(v), _fmt(f)] for v, f in cdf_points)))
    return path


def load_summary(path: PathLike) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_per_sample(path: PathLike) -> tuple[list[str], np.ndarray]:
    ids, caps = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "capacity_bits" not in reader.fieldnames or "sample_id" not in reader.fieldnames:
            raise ValidationError(f"{path}: expected columns sample_id, capacity_bits")
        for row in reader:
            ids.append(row["sample_id"])
            try:
                caps.append(float(row["capacity_bits"]))
            except ValueError:
                raise ValidationError(f"{path}: non-numeric capacity for {row['sample_id']}") from None
    return ids, np.array(caps)


def save_reductions(sample_ids: Sequence[str], results: Sequence[ReductionResult], out_dir: PathLike) -> Path:
    path = Path(out_dir) / "reduce.csv"
    rows = (
        [sid, ";".join(r.kept_model_ids), _fmt(r.original_capacity_bits), _fmt(r.reduced_capacity_bits), int(r.conforming)]
        for sid, r in zip(sample_ids, results)
    )
    header = ["sample_id", "kept_model_ids", "original_capacity_bits", "reduced_capacity_bits", "conforming"]
    _atomic_write(path, _csv_text(header, rows))
    return path


def save_selection(selection: GreedySelection, out_dir: PathLike, extra: Optional[dict] = None) -> Path:
    path = Path(out_dir) / "selection.json"
    payload = {
        "selected_model_ids": list(selection.selected_model_ids),
        "capacity_trace": list(selection.capacity_trace),
    }
    if extra:
        payload.update(extra)
    _atomic_write(path, _json_text(payload))
    return path


def load_dataset_csv(path: PathLike, label_column: str = "label") -> Dataset:
    """Numeric CSV with a 0/1 label column; every other column is a feature."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or label_column not in header:
            raise ValidationError(f"{path}: no {label_column!r} column")
        rows = list(reader)
    li = header.index(label_column)
    names = [h for k, h in enumerate(header) if k != li]
    try:
        table = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except ValueError:
        raise ValidationError(f"{path}: non-numeric entry") from None
    if table.ndim != 2 or table.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows")
    labels = table[:, li]
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise ValidationError(f"{path}: labels must be 0 or 1")
    return Dataset(np.delete(table, li, axis=1), labels.astype(np.int64), tuple(names))
