import csv
import json
import logging

import pytest
from sqlalchemy.orm import sessionmaker

from database.database import make_engine
from repositories.sweep_repository import SweepRepository
from services.errors import ConfigError, ResultsIOError
from services.experiment_service import ExperimentService, LinkScenario, SweepResult, SweepRow, TheoryPoint
from services.results_service import (
    CSV_COLUMNS,
    emit_results,
    output_paths,
    scenario_from_manifest,
    sha256_of,
)
from services.settings import MANIFEST_SCHEMA_VERSION

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _small_scenario() -> LinkScenario:
    return LinkScenario(
        name="results-small",
        n_symbols=1024,
        bias_or_lo_ratio=[8.0],
        osnr_sweep_db=[14.0],
        rx_filter=None,
        n_runs=1,
        base_seed=3,
    )


def _result(rows=None) -> SweepResult:
    return SweepResult(
        name="handmade",
        scheme="KkPamSsb",
        axis_name="osnr_db",
        axis_values=[12.0, 14.0],
        rows=rows or [],
        theory=[TheoryPoint(axis_name="osnr_db", axis_value=12.0, ber=1e-2, label="KkPam")],
        seeds=[1],
    )


def _row(axis_value: float, n_errors: int) -> SweepRow:
    return SweepRow(
        axis_name="osnr_db",
        axis_value=axis_value,
        bias_or_lo_ratio=10.0,
        scheme="KkPamSsb-digital",
        n_bits=1000,
        n_errors=n_errors,
        ber=n_errors / 1000,
        seed_base=1,
    )


def test_output_paths_share_a_stem():
    paths = output_paths("out/fig2a.csv")
    assert paths == {
        "csv": "out/fig2a.csv",
        "manifest": "out/fig2a.manifest.json",
        "theory": "out/fig2a.theory.csv",
        "spectra": "out/fig2a.spectra.csv",
    }
    assert output_paths("out/fig2a")["csv"] == "out/fig2a.csv"


def test_empty_sweep_writes_the_header_only(tmp_path):
    written = emit_results(_result(), str(tmp_path / "empty.csv"))
    with open(written["csv"]) as f:
        assert f.read() == ",".join(CSV_COLUMNS) + "\n"
    assert "theory" in written
    assert "spectra" not in written


def test_csv_rows_and_manifest(tmp_path):
    result = _result([_row(12.0, 20), _row(14.0, 3)])
    written = emit_results(result, str(tmp_path / "sub" / "handmade.csv"))

    with open(written["csv"], newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["n_errors"] for r in rows] == ["20", "3"]
    assert rows[0]["sideband"] == "-"
    assert list(rows[0]) == CSV_COLUMNS

    with open(written["manifest"]) as f:
        manifest = json.load(f)
    assert manifest["schema_version"] == MANIFEST_SCHEMA_VERSION
    assert manifest["csv_sha256"] == sha256_of(written["csv"])
    assert manifest["run_seeds"] == [1]
    assert manifest["scenario"] is None


def test_reruns_are_byte_identical(tmp_path):
    scenario = _small_scenario()
    service = ExperimentService(jobs=1, progress=False)
    first = emit_results(service.run(scenario), str(tmp_path / "a.csv"))
    second = emit_results(service.run(scenario), str(tmp_path / "b.csv"))
    assert sha256_of(first["csv"]) == sha256_of(second["csv"])


def test_write_failures_raise_results_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(ResultsIOError) as excinfo:
        emit_results(_result(), str(blocker / "out.csv"))
    assert str(blocker) in excinfo.value.path


def test_manifest_reproduces_the_scenario(tmp_path):
    scenario = _small_scenario()
    result = ExperimentService(jobs=1, progress=False).run(scenario)
    written = emit_results(result, str(tmp_path / "small.csv"), scenario,
                           session_factory=sessionmaker(bind=make_engine(f"sqlite:///{tmp_path / 'runs.db'}")))

    restored = scenario_from_manifest(written["manifest"])
    assert restored.dict() == scenario.dict()

    rerun = ExperimentService(jobs=1, progress=False).run(restored)
    again = emit_results(rerun, str(tmp_path / "again.csv"))
    assert sha256_of(again["csv"]) == sha256_of(written["csv"])


def test_manifest_errors(tmp_path):
    path = tmp_path / "old.manifest.json"
    path.write_text(json.dumps({"schema_version": MANIFEST_SCHEMA_VERSION + 1, "scenario": {}}))
    with pytest.raises(ConfigError):
        scenario_from_manifest(str(path))

    path.write_text(json.dumps({"schema_version": MANIFEST_SCHEMA_VERSION, "scenario": None}))
    with pytest.raises(ConfigError):
        scenario_from_manifest(str(path))

    path.write_text(json.dumps({"schema_version": MANIFEST_SCHEMA_VERSION, "scenario": {"n_runs": 0}}))
    with pytest.raises(ConfigError):
        scenario_from_manifest(str(path))

    with pytest.raises(ConfigError):
        scenario_from_manifest(str(tmp_path / "missing.json"))


def test_run_registry_records_sweeps(tmp_path):
    factory = sessionmaker(bind=make_engine(f"sqlite:///{tmp_path / 'registry.db'}"))
    scenario = _small_scenario()
    result = _result([_row(12.0, 20), _row(14.0, 3)])
    emit_results(result, str(tmp_path / "one.csv"), scenario, session_factory=factory)
    emit_results(result, str(tmp_path / "two.csv"), scenario, session_factory=factory)

    db = factory()
    try:
        repo = SweepRepository(db)
        runs = repo.get_by_scenario("handmade")
        assert len(runs) == 2
        latest = repo.latest("handmade")
        assert [row.n_errors for row in latest.rows] == [20, 3]
        assert latest.base_seed == 3

        summary = repo.scenario_summary()
        assert summary[0][0] == "handmade"
        assert summary[0][1] == 2
        assert summary[0][2] == 4000

        assert repo.get_by_id(latest.id).csv_path.endswith(".csv")
        assert repo.delete_run(latest.id)
        assert not repo.delete_run(latest.id)
        assert len(repo.get_by_scenario("handmade")) == 1
    finally:
        db.close()


def test_registry_failures_do_not_fail_the_sweep(tmp_path):
    def broken_factory():
        raise RuntimeError("registry offline")

    written = emit_results(_result(), str(tmp_path / "still.csv"), _small_scenario(),
                           session_factory=broken_factory)
    assert set(written) >= {"csv", "manifest"}
