import filecmp

import pytest

from kls_lab.cli import ConfigError, ExperimentConfig, load_config, main, parse_config_text

SMALL = ["--set", "pairs=20000", "--set", "samples=20000"]


def read(path):
    return path.read_text().splitlines()


def test_parse_config_text():
    vals = parse_config_text("# comment\nseed = 7\nfamilies=cube, gaussian\ndims=4,8\ndt=0.01  # inline\n")
    assert vals == {"seed": 7, "families": ("cube", "gaussian"), "dims": (4, 8), "dt": 0.01}


@pytest.mark.parametrize("text", ["seed", "nokey=1", "families=blob", "seed=abc"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_flags_win_over_file(tmp_path):
    cfg_file = tmp_path / "c.txt"
    cfg_file.write_text("seed=3\nruns=40\n")
    cfg = load_config("localize", str(cfg_file), {"seed": 9})
    assert cfg.seed == 9 and cfg.runs == 40
    assert cfg.families == ("gaussian",)


def test_hash_ignores_output_location():
    a = ExperimentConfig(out_dir="a", threads=1)
    b = ExperimentConfig(out_dir="b", threads=8)
    assert a.config_hash == b.config_hash
    assert a.config_hash != ExperimentConfig(seed=1).config_hash


def test_usage_errors_exit_2(tmp_path):
    assert main(["gen-clt", "--out", str(tmp_path), "--set", "bogus=1"]) == 2
    assert main(["gen-clt", "--out", str(tmp_path), "--set", "dims=0"]) == 2
    assert main(["gen-clt", "--config", str(tmp_path / "missing.txt")]) == 2
    assert main(["localize", "--out", str(tmp_path), "--set", "families=cube", "--set", "backend=gaussian"]) == 2
    assert main(["frobnicate"]) == 2


def test_selftest_passes(tmp_path):
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    lines = read(tmp_path / "selftest.csv")
    assert lines[0].startswith("# config_hash=") and lines[0].endswith(" seed=0")
    assert all(l.endswith(",true") for l in lines[2:])


def test_config_echo(tmp_path):
    main(["third-moment", "--out", str(tmp_path), "--seed", "12"] + SMALL)
    echo = read(tmp_path / "config.txt")
    assert "seed=12" in echo and "command=third-moment" in echo
    # the echoed file round-trips to the same config
    again = load_config("third-moment", str(tmp_path / "config.txt"))
    assert again.config_hash == load_config("third-moment", None, {"seed": 12, "pairs": 20000, "samples": 20000}).config_hash


def test_gen_clt_schema(tmp_path):
    assert main(["gen-clt", "--out", str(tmp_path), "--set", "dims=4"] + SMALL) == 0
    lines = read(tmp_path / "gen_clt.csv")
    assert lines[1] == "family_p,family_q,n,w1,w2,w2_sq_over_n,seed"
    assert len(lines) == 2 + 3


def test_localize_outputs(tmp_path):
    args = ["localize", "--out", str(tmp_path), "--set", "runs=3", "--set", "particles=2000", "--set", "T=0.05"]
    assert main(args) == 0
    trace = read(tmp_path / "trace_gaussian-n8_run0002.csv")
    assert trace[1] == "t,mu_norm,a_op,tr_a2,phi_q,ess,g_x1"
    t = [float(l.split(",")[0]) for l in trace[2:]]
    assert all(b > a for a, b in zip(t, t[1:]))
    summary = read(tmp_path / "localize_summary.csv")
    assert any(l.startswith("gaussian-n8,martingale,") for l in summary)


def test_localize_all_degenerate_exits_nonzero(tmp_path):
    args = ["localize", "--out", str(tmp_path), "--set", "runs=2", "--set", "particles=1000", "--set", "dims=32",
            "--set", "backend=joint", "--set", "T=2", "--set", "dt=0.05", "--set", "ess_floor=0.5"]
    assert main(args) == 1


def test_thread_count_does_not_change_output(tmp_path):
    base = ["cheeger-scan", "--set", "dims=2,3", "--set", "directions=4"] + SMALL
    main(base + ["--out", str(tmp_path / "a"), "--threads", "1"])
    main(base + ["--out", str(tmp_path / "b"), "--threads", "3"])
    assert filecmp.cmp(tmp_path / "a" / "cheeger_scan.csv", tmp_path / "b" / "cheeger_scan.csv", shallow=False)
