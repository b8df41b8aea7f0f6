import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slsloc import cli
from slsloc.config import ConfigError, SimulationConfig, parse_config, serialize_config

SMALL_ROOM = """
[room]
width = 2.0
depth = 2.0
grid_step = 0.5

[simulation]
trials = 3
n_list = [4, 8]
"""


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    assert cfg == SimulationConfig()
    assert cfg.room.width == 8.0 and cfg.array.n_elements == 32
    assert cfg.link.carrier_hz == 60e9 and cfg.master_seed == 0
    assert cfg.threshold_dbm == -80.0 and cfg.n_list == (4, 8, 16, 32)


@pytest.mark.parametrize("doc", ["array.n_elements = 0", "[array]\nn_elements = 0"])
def test_invariant_error_names_key(doc):
    with pytest.raises(ConfigError, match=r"array\.n_elements"):
        parse_config(doc)


@pytest.mark.parametrize(
    "doc,key",
    [
        ("[channel]\nsigma_db = -1", "channel.sigma_db"),
        ("[simulation]\nn_list = []", "simulation.n_list"),
        ("[simulation]\nn_list = [4, 0]", "simulation.n_list"),
        ("[room]\ngrid_step = 0", "room.grid_step"),
        ("[estimator]\nmethod = 'newton'", "estimator.method"),
        ("[array]\nn_elements = 'many'", "array.n_elements"),
        ("[simulation]\ntrials = 1.5", "simulation.trials"),
    ],
)
def test_bad_values_name_the_key(doc, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(doc)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="array.bogus"):
        parse_config("[array]\nbogus = 1")
    with pytest.raises(ConfigError, match="nosuch"):
        parse_config("[nosuch]\nx = 1")


def test_parse_error_has_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[array]\nn_elements = = 3")


def test_integers_accepted_for_floats():
    assert parse_config("[room]\nwidth = 6").room.width == 6.0


@given(
    st.integers(1, 128),
    st.floats(0.05, 20, allow_nan=False),
    st.floats(-120, 0),
    st.integers(0, 2**63 - 1),
    st.lists(st.integers(1, 64), min_size=1, max_size=5),
    st.sampled_from(["detected", "all"]),
)
def test_round_trip(n, sigma, thr, seed, n_list, mask):
    doc = (
        f"array.n_elements = {n}\nchannel.sigma_db = {sigma!r}\nchannel.threshold_dbm = {thr!r}\n"
        f"simulation.master_seed = {seed}\nsimulation.n_list = {n_list}\nsimulation.crlb_mask = '{mask}'\n"
    )
    cfg = parse_config(doc)
    assert parse_config(serialize_config(cfg)) == cfg


def write_cfg(tmp_path, text):
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return p


def test_crlb_map_default_grid(tmp_path):
    out = tmp_path / "crlb.csv"
    assert cli.main(["crlb-map", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["x_m", "y_m", "value", "unbounded"]
    assert len(rows) == 1 + 80 * 80


def test_rss_map_with_n_override(tmp_path):
    out = tmp_path / "rss.csv"
    assert cli.main(["rss-map", "--config", str(write_cfg(tmp_path, SMALL_ROOM)), "--out", str(out), "--n", "1"]) == 0
    assert len(list(csv.reader(open(out)))) == 17


def test_nlse_map_and_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_ROOM)
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert cli.main(["nlse-map", "--config", str(cfg), "--out", str(a), "--n", "8", "--seed", "1"]) == 0
    assert cli.main(["nlse-map", "--config", str(cfg), "--out", str(b), "--n", "8", "--seed", "1"]) == 0
    assert cli.main(["nlse-map", "--config", str(cfg), "--out", str(c), "--n", "8", "--seed", "2"]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_sweep_row_count(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_ROOM.replace("n_list = [4, 8]", "n_list = [4, 8, 16, 32]"))
    out = tmp_path / "s.csv"
    assert cli.main(["sweep-n", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 1 + 8
    assert [r[1] for r in rows[1:]] == ["crlb", "nlse"] * 4


def test_cdf_schema(tmp_path):
    out = tmp_path / "cdf.csv"
    assert cli.main(["cdf", "--config", str(write_cfg(tmp_path, SMALL_ROOM)), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))[1:]
    for key in {(r[0], r[1]) for r in rows}:
        part = [(float(r[2]), float(r[3])) for r in rows if (r[0], r[1]) == key]
        assert part == sorted(part)
        assert all(0 < p <= 1 for _, p in part)


def test_calibrate_hits_targets(tmp_path):
    out = tmp_path / "cal.csv"
    assert cli.main(["calibrate", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [int(r["n"]) for r in rows] == [4, 8]
    assert all(abs(float(r["rel_error"])) <= 0.15 for r in rows)
    # the shipped default noise level is the calibrated one
    assert float(rows[0]["sigma_db"]) == pytest.approx(SimulationConfig().sigma_db, rel=0.01)


def test_calibrate_failure_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cli, "CALIBRATION_TARGETS", {4: 0.74, 8: 0.74})
    assert cli.main(["calibrate", "--out", str(tmp_path / "cal.csv")]) == cli.EXIT_CALIBRATION
    assert "no sigma_db" in capsys.readouterr().err


def test_unwritable_output(tmp_path):
    assert cli.main(["rss-map", "--out", str(tmp_path / "missing" / "x.csv")]) == cli.EXIT_IO


def test_missing_config_file(tmp_path):
    assert cli.main(["rss-map", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_IO


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "array.n_elements = 0\n")
    assert cli.main(["rss-map", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_CONFIG
    assert "array.n_elements" in capsys.readouterr().err


def test_run_subcommand_rejects_unknown(tmp_path):
    with pytest.raises(ValueError):
        cli.run_subcommand("plot", SimulationConfig(), tmp_path / "x.csv")


def test_workers_env(monkeypatch):
    from slsloc.simharness import worker_count

    monkeypatch.setenv("SLSLOC_WORKERS", "3")
    assert worker_count() == 3
