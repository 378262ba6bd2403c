"""Manifest-driven batch evaluation and table reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from volbench.errors import VolbenchError
from volbench.metrics import METRIC_NAMES, MetricConfig, MetricRecord, evaluate_pair
from volbench.mesh import load_mesh, to_point_cloud
from volbench.nifti import parse_nifti, binarize
from volbench.volume import Plane, export_slice, midpoint_masked_slice, surface_points

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

RECORD_SCHEMA = "volbench.record/1"
REPORT_SCHEMA = "volbench.report/1"
TABLE_METRICS = ("f1", "voxel_iou", "voxel_dice", "chamfer", "emd")
TABLE_HEADERS = {
    "f1": "F1@{tau}",
    "voxel_iou": "Voxel-IoU",
    "voxel_dice": "Voxel-Dice",
    "chamfer": "CD",
    "emd": "EMD",
}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SampleEntry:
    id: str
    dataset: str
    scan_path: Path
    mask_path: Path
    plane: Plane
    predictions: dict[str, Path] = field(default_factory=dict)
    label: int | None = None


@dataclass(frozen=True)
class Manifest:
    samples: list[SampleEntry]
    config: MetricConfig = field(default_factory=MetricConfig)
    global_seed: int = 0


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ManifestError(f"{where}: missing field {key!r}")
    return d[key]


def _parse_entry(raw: dict, base: Path, n: int) -> SampleEntry:
    where = f"samples[{n}]"
    if not isinstance(raw, dict):
        raise ManifestError(f"{where}: expected an object")
    sid = str(_require(raw, "id", where))
    where = f"sample {sid!r}"
    try:
        plane = Plane.parse(_require(raw, "plane", where))
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}") from None
    preds = raw.get("predictions", {})
    if not isinstance(preds, dict):
        raise ManifestError(f"{where}: predictions must map model name -> path")
    label = raw.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise ManifestError(f"{where}: label must be an integer")
    return SampleEntry(
        id=sid,
        dataset=str(_require(raw, "dataset", where)),
        scan_path=base / str(_require(raw, "scan_path", where)),
        mask_path=base / str(_require(raw, "mask_path", where)),
        plane=plane,
        predictions={str(m): base / str(p) for m, p in preds.items()},
        label=label,
    )


def load_manifest(path) -> Manifest:
    """Read and validate a JSON or TOML manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(text.decode("utf-8"))
        else:
            raw = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be an object")

    base = path.resolve().parent
    samples = raw.get("samples")
    if not isinstance(samples, list):
        raise ManifestError("manifest: 'samples' must be a list")
    entries = [_parse_entry(s, base, i) for i, s in enumerate(samples)]
    seen = set()
    for e in entries:
        if e.id in seen:
            raise ManifestError(f"duplicate sample id {e.id!r}")
        seen.add(e.id)

    try:
        config = MetricConfig.from_dict(raw.get("config", {}))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"config: {exc}") from exc
    seed = raw.get("global_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ManifestError("global_seed must be an integer")
    return Manifest(entries, config, seed)


def sample_seed(global_seed: int, sample_id: str, model: str) -> int:
    """64-bit FNV-1a over (global seed, sample id, model name)."""
    h = 0xCBF29CE484222325
    for byte in f"{int(global_seed)}\x1f{sample_id}\x1f{model}".encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class PreparedSample:
    gt: object  # PointCloud
    slice2d: object  # Slice2D


def prepare_sample(entry: SampleEntry, slice_dir=None) -> PreparedSample:
    """Stages 1-2: masked midpoint slice and ground-truth surface cloud."""
    scan = parse_nifti(entry.scan_path)
    mask = binarize(parse_nifti(entry.mask_path), label=entry.label)
    s = midpoint_masked_slice(scan, mask, entry.plane)
    if slice_dir is not None:
        export_slice(s, Path(slice_dir) / f"{entry.id}_{entry.plane.value}.png")
    return PreparedSample(surface_points(mask), s)


def _ids(entry: SampleEntry, model: str) -> dict:
    return {"sample_id": entry.id, "dataset": entry.dataset, "model": model, "plane": entry.plane.value}


def run_sample(entry: SampleEntry, model: str, cfg: MetricConfig, prepared=None, slice_dir=None) -> MetricRecord:
    """Score one model's prediction for one sample; ``cfg.seed`` is the global seed."""
    ids = _ids(entry, model)
    seed = sample_seed(cfg.seed, entry.id, model)
    try:
        if prepared is None:
            prepared = prepare_sample(entry, slice_dir)
        pred_path = entry.predictions.get(model)
        if pred_path is None or not Path(pred_path).exists():
            return MetricRecord.skipped("prediction-missing", seed=seed, **ids)
        pred = to_point_cloud(load_mesh(pred_path), cfg.sample_points, seed, cfg.mesh_mode)
    except VolbenchError as exc:
        log.info("skipping %s/%s: %s", entry.id, model, exc)
        return MetricRecord.skipped(exc.reason, seed=seed, **ids)
    return evaluate_pair(pred, prepared.gt, replace(cfg, seed=seed), **ids)


def _run_entry(entry: SampleEntry, cfg: MetricConfig, slice_dir) -> list[MetricRecord]:
    try:
        prepared = prepare_sample(entry, slice_dir)
    except VolbenchError as exc:
        log.info("skipping %s: %s", entry.id, exc)
        return [
            MetricRecord.skipped(exc.reason, seed=sample_seed(cfg.seed, entry.id, m), **_ids(entry, m))
            for m in sorted(entry.predictions)
        ]
    except Exception as exc:  # noqa: BLE001 - recorded as a hard failure
        log.exception("sample %s failed", entry.id)
        reason = f"internal-error:{type(exc).__name__}"
        return [MetricRecord.skipped(reason, **_ids(entry, m)) for m in sorted(entry.predictions)]

    out = []
    for model in sorted(entry.predictions):
        try:
            out.append(run_sample(entry, model, cfg, prepared=prepared))
        except Exception as exc:  # noqa: BLE001
            log.exception("sample %s / %s failed", entry.id, model)
            out.append(MetricRecord.skipped(f"internal-error:{type(exc).__name__}", **_ids(entry, model)))
    return out


def record_sort_key(r: MetricRecord):
    return (r.dataset, r.model, r.plane, r.sample_id)


def run_manifest(manifest: Manifest, threads: int | None = None, slice_dir=None) -> list[MetricRecord]:
    """Evaluate every (sample, model) pair; output order does not depend on scheduling."""
    cfg = replace(manifest.config, seed=manifest.global_seed)
    threads = max(1, threads or os.cpu_count() or 1)
    if threads == 1:
        batches = [_run_entry(e, cfg, slice_dir) for e in manifest.samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(lambda e: _run_entry(e, cfg, slice_dir), manifest.samples))
    return sorted((r for batch in batches for r in batch), key=record_sort_key)


def is_hard_failure(r: MetricRecord) -> bool:
    return r.status != "ok" and (r.reason or "").startswith("internal-error")


# ---------------------------------------------------------------- records


def record_to_dict(r: MetricRecord) -> dict:
    return {"schema": RECORD_SCHEMA, **asdict(r)}


def record_from_dict(d: dict) -> MetricRecord:
    d = dict(d)
    schema = d.pop("schema", None)
    if schema != RECORD_SCHEMA:
        raise ValueError(f"unsupported record schema {schema!r}")
    return MetricRecord(**d)


def record_filename(r: MetricRecord) -> str:
    safe = lambda s: "".join(c if c.isalnum() or c in "-_." else "_" for c in s)  # noqa: E731
    return f"{safe(r.sample_id)}__{safe(r.model)}.json"


def write_record(r: MetricRecord, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record_to_dict(r), indent=2, sort_keys=True) + "\n")
    return path


def load_records(directory) -> list[MetricRecord]:
    records = []
    for p in sorted(Path(directory).rglob("*.json")):
        try:
            d = json.loads(p.read_text())
        except ValueError:
            continue
        if isinstance(d, dict) and d.get("schema") == RECORD_SCHEMA:
            records.append(record_from_dict(d))
    return sorted(records, key=record_sort_key)


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class MetricStats:
    mean: float | None
    std: float | None


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    model: str
    plane: str
    n_ok: int
    n_skipped: int
    stats: dict[str, MetricStats]


def _mean_std(values: list[float], ddof: int) -> MetricStats:
    n = len(values)
    if n == 0:
        return MetricStats(None, None)
    mean = math.fsum(values) / n
    if n - ddof <= 0:
        return MetricStats(mean, 0.0)
    var = math.fsum((v - mean) ** 2 for v in values) / (n - ddof)
    return MetricStats(mean, math.sqrt(var))


def aggregate(records, ddof: int = 1) -> list[AggregateRow]:
    """Mean and standard deviation (sample std by default) per (dataset, model, plane)."""
    groups: dict[tuple, list[MetricRecord]] = {}
    for r in records:
        groups.setdefault((r.dataset, r.model, r.plane), []).append(r)
    rows = []
    for key in sorted(groups):
        group = sorted(groups[key], key=lambda r: r.sample_id)
        ok = [r for r in group if r.status == "ok"]
        stats = {m: _mean_std([getattr(r, m) for r in ok], ddof) for m in METRIC_NAMES}
        rows.append(AggregateRow(*key, n_ok=len(ok), n_skipped=len(group) - len(ok), stats=stats))
    return rows


# ---------------------------------------------------------------- reports

_ID_COLUMNS = ("dataset", "model", "plane", "n_ok", "n_skipped")


def csv_columns() -> list[str]:
    cols = list(_ID_COLUMNS)
    for m in METRIC_NAMES:
        cols += [f"{m}_mean", f"{m}_std"]
    return cols


def _row_dict(row: AggregateRow) -> dict:
    d = {c: getattr(row, c) for c in _ID_COLUMNS}
    for m in METRIC_NAMES:
        d[f"{m}_mean"] = row.stats[m].mean
        d[f"{m}_std"] = row.stats[m].std
    return d


def render_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=csv_columns(), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in _row_dict(row).items()})
    return buf.getvalue()


def render_json(rows) -> str:
    doc = {"schema": REPORT_SCHEMA, "rows": [_row_dict(r) for r in rows]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def format_cell(stats: MetricStats) -> str:
    if stats.mean is None:
        return "n/a"
    return f"{stats.mean:.4f} ± {stats.std:.4f}"


def render_markdown(rows, tau: float = 0.01) -> str:
    headers = ["Model", "Plane"] + [TABLE_HEADERS[m].format(tau=f"{tau:g}") for m in TABLE_METRICS] + ["n", "skipped"]
    head = "| " + " | ".join(headers) + " |\n|" + "---|" * len(headers) + "\n"
    out = ["# Benchmark results\n"]
    datasets = sorted({r.dataset for r in rows})
    if not datasets:
        out.append("\n" + head)
    for ds in datasets:
        out.append(f"\n## {ds}\n\n" + head)
        for r in (r for r in rows if r.dataset == ds):
            cells = [r.model, r.plane] + [format_cell(r.stats[m]) for m in TABLE_METRICS] + [str(r.n_ok), str(r.n_skipped)]
            out.append("| " + " | ".join(cells) + " |\n")
    out.append(
        "\nCells are mean ± standard deviation over successfully scored samples. "
        "Higher is better for F1, Voxel-IoU and Voxel-Dice; lower is better for CD and EMD.\n"
    )
    return "".join(out)


def write_report(rows, fmt: str, path, tau: float = 0.01) -> Path:
    renderers = {"csv": render_csv, "json": render_json, "markdown": lambda r: render_markdown(r, tau)}
    if fmt not in renderers:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(renderers[fmt](rows), encoding="utf-8")
    return path
