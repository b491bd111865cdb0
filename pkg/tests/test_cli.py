import json

import pandas as pd
import pytest

import cli
from app.common.errors import (
    AssumptionError,
    ConsistencyError,
    RejectedInputError,
    SchemaViolationError,
    SolverError,
)
from app.routers.sim.scenario import builtin_dcdc_scenario


def _write(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_exit_codes():
    assert cli.exit_code_for(AssumptionError("a", failed=[4])) == cli.EXIT_INPUT
    assert cli.exit_code_for(SchemaViolationError("s", field="x0")) == cli.EXIT_INPUT
    assert cli.exit_code_for(RejectedInputError("r")) == cli.EXIT_INPUT
    assert cli.exit_code_for(SolverError("s")) == cli.EXIT_NUMERIC
    assert cli.exit_code_for(ConsistencyError("c", step=3)) == cli.EXIT_NUMERIC
    assert cli.exit_code_for(OSError("disk")) == cli.EXIT_IO


def test_parser_requires_a_source():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["run"])
    args = cli.build_parser().parse_args(["run", "--builtin", "dcdc", "--format", "json", "--steps", "5"])
    assert args.builtin == "dcdc" and args.format == "json" and args.steps == 5


def test_validate_unstable_file_exits_with_input_code(tmp_path, capsys):
    data = json.loads(builtin_dcdc_scenario().model_dump_json())
    data["system"]["A"] = [[1.01, 0.0], [0.0, 0.5]]
    path = _write(tmp_path / "unstable.json", data)
    assert cli.main(["validate", "--config", str(path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert 4 in err["failed_assumptions"]


def test_broken_file_exits_with_input_code(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    assert cli.main(["run", "--config", str(path), "--quiet"]) == 2


def test_too_few_monte_carlo_samples_rejected():
    assert cli.main(["run", "--builtin", "dcdc", "--mc-samples", "50", "--quiet"]) == 2


@pytest.mark.slow
def test_short_run_drops_later_events(capsys):
    assert cli.main(["run", "--builtin", "dcdc", "--steps", "3", "--quiet"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 3


@pytest.mark.slow
def test_run_writes_trace_and_sets(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    sets = tmp_path / "sets.json"
    code = cli.main(
        ["run", "--builtin", "dcdc", "--steps", "55", "--out", str(out), "--export-sets", str(sets), "--quiet"]
    )
    assert code == 0
    frame = pd.read_csv(out)
    assert len(frame) == 55
    assert set(json.loads(sets.read_text(encoding="utf-8"))) == {"X_P", "X_f", "X_C1"}
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 55
