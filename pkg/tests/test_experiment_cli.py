import json
import math

import numpy as np
import pytest

from grtf import io
from grtf.acoustics import SceneConfig, simulate_spectrogram
from grtf.cli import EXIT_CONFIG, EXIT_DATA, count_histogram, main
from grtf.errors import ConfigError, DataError
from grtf.experiment import (REFERENCE_TABLE, ExperimentConfig, load_cells, load_config,
                             make_atfs, make_directions, report, run_experiment,
                             scene_subsets)
from grtf.spectral import SpectrogramTensor, StftConfig

SMALL = {"n_directions": 6, "k_list": [1], "snr_db": ["inf"], "duration_s": 0.25,
         "stride": 2}


def write_config(path, body):
    path.write_text(body if isinstance(body, str) else json.dumps(body, indent=2))
    return path


# ---------------------------------------------------------------- config


def test_default_config_mirrors_protocol():
    cfg = ExperimentConfig()
    assert (cfg.sample_rate, cfg.window, cfg.hop, cfg.n_mics, cfg.n_directions) == (
        8000, 256, 128, 4, 21)
    assert cfg.k_list == [1, 2, 3] and cfg.snr_db == [10.0, 50.0]


def test_config_error_names_line(tmp_path):
    path = write_config(tmp_path / "c.json", '{\n  "seed": 1,\n  "k_list": [1, 4]\n}')
    with pytest.raises(ConfigError, match=r"c\.json:3: k_list"):
        load_config(path)
    path = write_config(tmp_path / "d.json", '{\n  "seed": 1,\n\n  "bogus": 2\n}')
    with pytest.raises(ConfigError, match=r"d\.json:4: unknown field 'bogus'"):
        load_config(path)
    path = write_config(tmp_path / "e.json", '{\n  "seed": 1,\n  "stride": \n}')
    with pytest.raises(ConfigError, match=r"e\.json:4:1: Expecting value"):
        load_config(path)
    path = write_config(tmp_path / "f.json", '{\n  "n_directions": 2,\n  "k_list": [1, 2, 3]\n}')
    with pytest.raises(ConfigError, match=r"f\.json:2: n_directions"):
        load_config(path)


def test_config_snr_sentinel_and_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.json", SMALL), {"seed": 5})
    assert cfg.snr_db == [math.inf] and cfg.seed == 5
    assert cfg.to_dict()["snr_db"] == ["inf"]


def test_full_grid_scene_counts():
    cfg = ExperimentConfig(max_scenes=None)
    ids = make_directions(cfg).ids
    assert [len(scene_subsets(cfg, ids, K)) for K in (1, 2, 3)] == [21, 210, 1330]
    sub = scene_subsets(ExperimentConfig(), ids, 3)
    assert len(sub) == 200 and len(set(sub)) == 200
    assert sub == scene_subsets(ExperimentConfig(), ids, 3)


def test_directions_and_atfs_deterministic():
    a, b = make_atfs(ExperimentConfig(seed=3)), make_atfs(ExperimentConfig(seed=3))
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != make_atfs(ExperimentConfig(seed=4)).fingerprint()


# ---------------------------------------------------------------- experiment / report


def test_noiseless_k1_zero_error(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.json", SMALL))
    out = run_experiment(cfg, tmp_path / "res")
    rep = out["reports"][(1, math.inf)]
    assert rep.n_tasks > 0
    assert rep.mean_abs_azimuth_error == 0 and rep.exact_match_rate == 1
    text, table = report(tmp_path / "res")
    assert table.splitlines() == ["snr_db,K=1", "inf,0.000000"]
    assert "0.04 / 0.68 / 1.45" in text and "10.9 / 17.5 / 27.4" in text
    assert "per source per second" in text


def test_single_cell_table(tmp_path):
    cfg = load_config(None, {**SMALL, "snr_db": [50]})
    run_experiment(cfg, tmp_path)
    assert len(load_cells(tmp_path)) == 1
    text, table = report(tmp_path)
    rows = table.splitlines()
    assert rows[0] == "snr_db,K=1" and len(rows) == 2 and rows[1].startswith("50,")


def test_report_errors(tmp_path):
    with pytest.raises(DataError):
        report(tmp_path)
    (tmp_path / "cells.csv").write_text("K,snr_db\n")
    with pytest.raises(DataError):
        report(tmp_path)
    (tmp_path / "cells.csv").write_text("K,snr_db,mean_abs_azimuth_error_deg,exact_match_rate\n"
                                        "x,50,1,1\n")
    with pytest.raises(DataError):
        report(tmp_path)


def test_reference_table_values():
    assert REFERENCE_TABLE[50.0] == {1: 0.04, 2: 0.68, 3: 1.45}
    assert REFERENCE_TABLE[10.0] == {1: 10.9, 2: 17.5, 3: 27.4}


# ---------------------------------------------------------------- count-sources


@pytest.fixture(scope="module")
def atfs():
    return make_atfs(ExperimentConfig())


@pytest.mark.parametrize("sources,expected", [((4,), 1), ((2, 9), 2), ((1, 7, 15), 3)])
def test_count_sources_modal(atfs, sources, expected):
    spec = simulate_spectrogram(atfs, SceneConfig(sources, seed=1), 61)
    assert count_histogram(spec, 1e-8)["modal_count"] == expected


def test_count_sources_silence():
    spec = SpectrogramTensor(np.zeros((128, 10, 4)), 8000, StftConfig())
    h = count_histogram(spec, 1e-8)
    assert h["modal_count"] == 0 and h["histogram"] == {"0": h["bins"]}


# ---------------------------------------------------------------- CLI


def test_cli_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {**SMALL, "k_list": [1, 2]})
    assert main(["gen-atf", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    atf = str(tmp_path / "a" / "atfs.bin")
    assert (tmp_path / "a" / "directions.csv").read_text().startswith("id,azimuth,elevation")
    assert main(["build-dict", "--atf", atf, "--k", "2", "--out", str(tmp_path / "d")]) == 0
    assert main(["simulate", "--atf", atf, "--sources", "1,4", "--seed", "3",
                 "--out", str(tmp_path / "scene.wav")]) == 0
    capsys.readouterr()
    assert main(["localize", "--dict", str(tmp_path / "d" / "dict_K2.bin"),
                 "--input", str(tmp_path / "scene.wav"), "--out", str(tmp_path / "l")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["most_frequent"] == [1, 4]
    assert (tmp_path / "l" / "localization.csv").is_file()
    assert main(["count-sources", "--atf", atf, "--sources", "0,2"]) == 0
    assert json.loads(capsys.readouterr().out)["modal_count"] == 2


def test_cli_experiment_and_report(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", SMALL)
    out = tmp_path / "r"
    assert main(["experiment", "--config", str(cfg), "--out", str(out), "--seed", "2",
                 "--snr-db", "inf,50", "--k", "1"]) == 0
    assert main(["report", "--out", str(out)]) == 0
    assert "SNR=inf dB" in capsys.readouterr().out
    assert (out / "table.csv").read_text().startswith("snr_db,K=1")
    assert json.loads((out / "summary.json").read_text())["config"]["seed"] == 2


def test_cli_exit_codes(tmp_path):
    bad = write_config(tmp_path / "bad.json", '{"k_list": [1, 2, 9]}')
    assert main(["experiment", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["report", "--out", str(tmp_path / "empty")]) == EXIT_DATA
    assert main(["build-dict", "--atf", str(tmp_path / "none.bin"),
                 "--out", str(tmp_path / "y")]) == EXIT_DATA
    assert main(["count-sources"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "--nope"])
    assert exc.value.code == 2


def test_io_used_by_cli_loads(tmp_path):
    main(["gen-atf", "--out", str(tmp_path), "--seed", "9"])
    atfs = io.load_atfset(tmp_path / "atfs.bin")
    assert atfs.fingerprint() == make_atfs(ExperimentConfig(seed=9)).fingerprint()
