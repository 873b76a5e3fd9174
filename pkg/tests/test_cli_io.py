import csv
import json

import numpy as np
import pytest

from mvswitch import cli_io
from mvswitch.errors import ParseError, ValidationError


def bundled_dict(name="example61.cfg"):
    return json.loads(cli_io.bundled_config(name).read_text())


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# load_config

def test_bundled_example61():
    cfg = cli_io.load_config(cli_io.bundled_config("example61.cfg"))
    m = cfg.model
    assert (m.m, m.partition.l, cfg.T, cfg.h, cfg.paths) == (4, 2, 5.0, 0.01, 100)
    assert cfg.epsilons == (0.1, 0.01, 0.001) and cfg.lam is None and cfg.seed == 42
    np.testing.assert_array_equal(m.coeffs.r, [0.5, -0.1, 0.5, -0.1])
    np.testing.assert_array_equal(m.fast[:2, :2], [[-1, 1], [2, -2]])


def test_bundled_example62_transient_block():
    cfg = cli_io.load_config(cli_io.bundled_config("example62.cfg"))
    p = cfg.model.partition
    assert (p.m, p.l, p.transient) == (6, 2, (4, 5))
    # the printed matrices are kept verbatim
    np.testing.assert_array_equal(cfg.model.fast, cfg.model.slow)


def test_missing_h_names_field(tmp_path):
    data = bundled_dict()
    del data["h"]
    with pytest.raises(ParseError, match="'h'"):
        cli_io.load_config(write_cfg(tmp_path, data))


def test_nonintegral_grid(tmp_path):
    data = bundled_dict()
    data["h"] = 0.03
    with pytest.raises(ValidationError, match="T/h"):
        cli_io.load_config(write_cfg(tmp_path, data))


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "T": 5,\n  oops\n}')
    with pytest.raises(ParseError, match="line 3"):
        cli_io.load_config(path)


@pytest.mark.parametrize(
    "key, value",
    [("epsilons", [0.1, -0.01]), ("paths", 0)],
)
def test_invalid_values(tmp_path, key, value):
    data = bundled_dict()
    data[key] = value
    with pytest.raises(ValidationError):
        cli_io.load_config(write_cfg(tmp_path, data))


def test_invalid_generator_is_validation_error(tmp_path):
    data = bundled_dict()
    data["fast_generator"][0][1] = -1
    with pytest.raises(ValidationError):
        cli_io.load_config(write_cfg(tmp_path, data))


@pytest.mark.parametrize("name", ["example61.cfg", "example62.cfg"])
def test_round_trip(tmp_path, name):
    cfg = cli_io.load_config(cli_io.bundled_config(name))
    path = tmp_path / "dumped.json"
    path.write_text(cli_io.dump_config(cfg))
    again = cli_io.load_config(path)
    assert again == cfg
    assert cli_io.dump_config(again) == cli_io.dump_config(cfg)


def test_fixed_number_format():
    assert cli_io.fmt(2 / 3) == "0.666666666666667"
    assert cli_io.fmt(1) == "1"
    assert cli_io.fmt(-5 / 3) == "-1.66666666666667"


# subcommands

def run(tmp_path, *argv, config="example61.cfg"):
    return cli_io.main([*argv, "--config", str(config), "--out", str(tmp_path)])


def test_stationary_csv(tmp_path):
    assert run(tmp_path, "stationary") == 0
    rows = read_csv(tmp_path / "stationary.csv")
    assert rows == [
        ["cluster", "regime", "mu"],
        ["1", "1", "0.666666666666667"],
        ["1", "2", "0.333333333333333"],
        ["2", "3", "0.75"],
        ["2", "4", "0.25"],
    ]


def test_aggregate_csv(tmp_path):
    assert run(tmp_path, "aggregate") == 0
    rows = read_csv(tmp_path / "generator_bar.csv")
    assert rows[1:] == [["-1.66666666666667", "1.66666666666667"], ["1.5", "-1.5"]]
    assert not (tmp_path / "absorption_weights.csv").exists()


def test_aggregate_transient_writes_weights(tmp_path):
    assert run(tmp_path, "aggregate", config="example62.cfg") == 0
    w = np.array(read_csv(tmp_path / "absorption_weights.csv")[1:], float)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-14)


def test_validate_prints(tmp_path, capsys):
    assert run(tmp_path, "validate") == 0
    out = capsys.readouterr().out
    assert "valid" in out and "m=4" in out and "feasible=True" in out


def test_riccati_files(tmp_path):
    assert run(tmp_path, "riccati", "--eps", "0.1") == 0
    rows = read_csv(tmp_path / "riccati_eps0.1.csv")
    assert rows[0] == ["t", "regime", "P", "H"]
    assert len(rows) == 1 + 501 * 4
    # terminal rows are exactly one
    assert all(r[2] == "1" and r[3] == "1" for r in rows[-4:])
    limit = read_csv(tmp_path / "riccati_limit.csv")
    assert limit[0] == ["t", "cluster", "P", "H"] and len(limit) == 1 + 501 * 2


def test_simulate_files(tmp_path):
    assert run(tmp_path, "simulate", "--eps", "0.1", "--paths", "3") == 0
    for name in ("optimal", "near_optimal"):
        rows = read_csv(tmp_path / f"paths_eps0.1_{name}.csv")
        assert rows[0] == ["path_id", "t", "regime", "x", "u_1"]
        assert len(rows) == 1 + 3 * 501
        assert rows[1][:4] == ["0", "0", "1", "0"]


def test_experiment_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "experiment", "--paths", "20") == 0
    assert run(b, "experiment", "--paths", "20") == 0
    text = (a / "report.csv").read_bytes()
    assert text == (b / "report.csv").read_bytes()
    assert text.decode() in capsys.readouterr().out


def test_experiment_worker_count_irrelevant(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli_io.main(["experiment", "--config", "example62.cfg", "--paths", "30", "--out", str(a), "--workers", "1"]) == 0
    assert cli_io.main(["experiment", "--config", "example62.cfg", "--paths", "30", "--out", str(b), "--workers", "3"]) == 0
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    assert run(tmp_path / "a", "experiment", "--paths", "20", "--eps", "0.1") == 0
    assert run(tmp_path / "b", "experiment", "--paths", "20", "--eps", "0.1", "--seed", "7") == 0
    assert (tmp_path / "a" / "report.csv").read_text() != (tmp_path / "b" / "report.csv").read_text()


# exit codes

def test_exit_missing_file(tmp_path, capsys):
    assert run(tmp_path, "stationary", config=tmp_path / "nope.json") == 2
    assert "error" in capsys.readouterr().err


def test_exit_parse_error(tmp_path):
    data = bundled_dict()
    del data["T"]
    assert run(tmp_path, "validate", config=write_cfg(tmp_path, data)) == 2


@pytest.mark.parametrize("flags", [["--paths", "0"], ["--eps", "0.1,x"], ["--eps", "-1"]])
def test_exit_bad_overrides(tmp_path, flags):
    assert run(tmp_path, "validate", *flags) == 2


def test_exit_model_error(tmp_path, capsys):
    # no control authority: calibrating lambda fails at run time
    data = bundled_dict()
    data["coefficients"]["B"] = [[0], [0], [0], [0]]
    path = write_cfg(tmp_path, data)
    assert run(tmp_path, "experiment", "--paths", "5", "--eps", "0.1", config=path) == 1
    assert "DegenerateSlope" in capsys.readouterr().err


def test_unknown_subcommand(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "frobnicate")
    assert exc.value.code == 2
