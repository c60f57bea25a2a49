import csv
import hashlib
import json
import logging
import os
from datetime import datetime
from typing import Callable, Dict, Optional

from pydantic import ValidationError

from services.errors import ConfigError, ResultsIOError
from services.experiment_service import LinkScenario, SweepResult
from services.settings import MANIFEST_SCHEMA_VERSION, __version__

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "axis_name",
    "axis_value",
    "bias_or_lo_ratio",
    "scheme",
    "sideband",
    "polarization",
    "n_bits",
    "n_errors",
    "ber",
    "min_phase_violations",
    "clip_count",
    "seed_base",
]

THEORY_COLUMNS = ["axis_name", "axis_value", "ber", "label"]
SPECTRA_COLUMNS = ["stage", "freq_hz", "power_w"]


def _stem(csv_path: str) -> str:
    base, ext = os.path.splitext(csv_path)
    return base if ext == ".csv" else csv_path


def output_paths(csv_path: str) -> Dict[str, str]:
    stem = _stem(csv_path)
    return {
        "csv": stem + ".csv",
        "manifest": stem + ".manifest.json",
        "theory": stem + ".theory.csv",
        "spectra": stem + ".spectra.csv",
    }


def _write_rows(path: str, columns, rows) -> None:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            writer.writerows(rows)
    except OSError as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        raise ResultsIOError(path, e.strerror or str(e))


def sha256_of(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(result: SweepResult, csv_sha256: str,
                   scenario: Optional[LinkScenario] = None) -> Dict:
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "toolkit_version": __version__,
        "name": result.name,
        "scheme": result.scheme,
        "axis_name": result.axis_name,
        "axis_values": result.axis_values,
        "base_seed": scenario.base_seed if scenario else (result.rows[0].seed_base if result.rows else None),
        "run_seeds": result.seeds,
        "wall_time_s": result.wall_time_s,
        "csv_sha256": csv_sha256,
        "created_at": datetime.utcnow().isoformat(),
        "timing": result.timing,
        "scenario": json.loads(scenario.json()) if scenario else None,
    }


def emit_results(result: SweepResult, path: str, scenario: Optional[LinkScenario] = None,
                 session_factory: Optional[Callable] = None) -> Dict[str, str]:
    """
    Write ``<stem>.csv`` and ``<stem>.manifest.json`` (plus theory and spectra files when present).

    The CSV carries only deterministic content so reruns from a manifest are byte-identical; the
    manifest holds the wall time and creation stamp. Returns the written paths.
    """
    paths = output_paths(path)
    directory = os.path.dirname(paths["csv"])
    if directory:
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as e:
            raise ResultsIOError(directory, f"cannot create directory: {str(e)}")

    _write_rows(paths["csv"], CSV_COLUMNS, (
        [getattr(row, column) for column in CSV_COLUMNS] for row in result.rows
    ))
    written = {"csv": paths["csv"], "manifest": paths["manifest"]}

    if result.theory:
        _write_rows(paths["theory"], THEORY_COLUMNS, (
            [point.axis_name, point.axis_value, point.ber, point.label] for point in result.theory
        ))
        written["theory"] = paths["theory"]
    if result.spectra:
        _write_rows(paths["spectra"], SPECTRA_COLUMNS, (
            [stage, freq, power] for stage, points in result.spectra.items() for freq, power in points
        ))
        written["spectra"] = paths["spectra"]

    csv_sha = sha256_of(paths["csv"])
    manifest = build_manifest(result, csv_sha, scenario)
    try:
        with open(paths["manifest"], "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as e:
        logger.error(f"Failed to write manifest {paths['manifest']}: {str(e)}")
        raise ResultsIOError(paths["manifest"], e.strerror or str(e))

    logger.info(f"Wrote {len(result.rows)} rows to {paths['csv']}")
    if scenario is not None:
        record_run(result, scenario, paths, csv_sha, session_factory)
    return written


def record_run(result: SweepResult, scenario: LinkScenario, paths: Dict[str, str], csv_sha: str,
               session_factory: Optional[Callable] = None) -> Optional[int]:
    """Add the sweep to the run registry; failures are logged and swallowed"""
    try:
        from database.init_db import init_db
        from repositories.sweep_repository import SweepRepository

        if session_factory is None:
            from database.database import SessionLocal
            session_factory = SessionLocal
        db = session_factory()
        try:
            init_db(bind=db.get_bind())
            run = SweepRepository(db).record_run(
                {
                    "scenario_name": result.name,
                    "scheme": result.scheme,
                    "axis_name": result.axis_name,
                    "base_seed": scenario.base_seed,
                    "n_runs": scenario.n_runs,
                    "toolkit_version": __version__,
                    "wall_time_s": result.wall_time_s,
                    "csv_path": paths["csv"],
                    "manifest_path": paths["manifest"],
                    "csv_sha256": csv_sha,
                    "timing": result.timing,
                },
                [
                    row.dict(exclude={"axis_name", "seed_base"})
                    for row in result.rows
                ],
            )
            logger.info(f"Recorded sweep {result.name} as run {run.id}")
            return run.id
        finally:
            db.close()
    except Exception as e:
        logger.error(f"Error recording sweep {result.name} in the run registry: {str(e)}")
        return None


def scenario_from_manifest(path: str) -> LinkScenario:
    """Rebuild the exact scenario echoed in a manifest"""
    try:
        with open(path, "r") as f:
            manifest = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read manifest {path}: {str(e)}")
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ConfigError(
            f"Manifest {path} has schema version {manifest.get('schema_version')}, "
            f"expected {MANIFEST_SCHEMA_VERSION}"
        )
    if not manifest.get("scenario"):
        raise ConfigError(f"Manifest {path} does not echo its scenario")
    try:
        return LinkScenario.parse_obj(manifest["scenario"])
    except ValidationError as e:
        raise ConfigError(f"Manifest {path} echoes an invalid scenario: {str(e)}")
