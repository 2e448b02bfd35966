"""Command-line client: argument handling, renderers, files, exit codes."""

import json
import socket
import subprocess
import sys
import threading
import time

import pytest
import uvicorn

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from fsmclab import load_table, parse_config
from fsmclab.cli import main
from fsmclab.service import handlers

REF_C = 1.543442503703719

DTCSI_TOML = """\
[fading]
kind = "finite_markov"
gains = [2.0, 1.0]
transition = [[0.65, 0.35], [0.62, 0.38]]

[csi]
delay = 1

[code]
power = 3.0
epsilon = 0.2
horizons = [12]

[run]
scheme = "dtcsi_mux"
trials = 30
seed = 3
"""

SK_TOML = """\
[fading]
kind = "unit"

[code]
power = 3.0
horizons = [12]

[run]
scheme = "sk_awgn"
trials = 10
seed = 1
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(DTCSI_TOML)
    return str(p)


@pytest.fixture
def sk_cfg_path(tmp_path):
    p = tmp_path / "sk.toml"
    p.write_text(SK_TOML)
    return str(p)


def run_cli(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_validate_text(capsys, cfg_path):
    code, out, err = run_cli(capsys, "validate", "-c", cfg_path)
    assert code == 0 and err == ""
    assert out.splitlines()[0] == "ok"
    assert "K=12" in out


def test_capacity_json_matches_handler(capsys, cfg_path):
    code, out, _ = run_cli(capsys, "capacity", "-c", cfg_path, "--format", "json")
    assert code == 0
    body = json.loads(out)
    with open(cfg_path, "rb") as fp:
        cfg = parse_config(tomllib.load(fp))
    assert body == handlers.handle_capacity(cfg)
    assert body["bits_per_use"] == pytest.approx(REF_C, abs=1e-12)


def test_capacity_text_renders_states(capsys, cfg_path):
    code, out, _ = run_cli(capsys, "capacity", "-c", cfg_path)
    assert code == 0
    assert out.startswith("capacity: 1.5434425037")
    assert "state 0:" in out and "state 1:" in out
    assert "block bits at K=12" in out


def test_simulate_table_and_csv(capsys, cfg_path, tmp_path):
    out_path = tmp_path / "table.csv"
    code, out, _ = run_cli(capsys, "simulate", "-c", cfg_path,
                           "--out", str(out_path))
    assert code == 0
    assert out.splitlines()[0].lstrip().startswith("horizon")
    table = load_table(str(out_path))
    assert table.rows[0][0] == 12
    assert int(table.meta["trials"]) == 30
    assert "digest" in table.meta


def test_simulate_overrides(capsys, cfg_path):
    code, out, _ = run_cli(capsys, "simulate", "-c", cfg_path, "--horizon", "10",
                           "--trials", "12", "--seed", "9", "--format", "json")
    assert code == 0
    body = json.loads(out)
    assert body["meta"]["trials"] == 12
    assert body["meta"]["seed"] == 9
    assert len(body["rows"]) == 1 and body["rows"][0][0] == 10


def test_simulate_dump_traces(capsys, cfg_path, tmp_path):
    traces_path = tmp_path / "traces.json"
    code, _, _ = run_cli(capsys, "simulate", "-c", cfg_path,
                         "--dump-traces", str(traces_path), "--format", "json")
    assert code == 0
    traces = json.loads(traces_path.read_text())
    assert 0 < len(traces) <= 8
    for t in traces:
        assert set(t) >= {"trial", "message", "decoded", "gains", "input",
                          "output", "estimate", "residual_max"}
        assert t["residual_max"] < 1e-9
        assert len(t["input"]) == 13


def test_dump_traces_requires_local_run(capsys, cfg_path, tmp_path):
    code, out, err = run_cli(capsys, "simulate", "-c", cfg_path,
                             "--server", "http://127.0.0.1:1",
                             "--dump-traces", str(tmp_path / "t.json"))
    assert code == 1 and out == ""
    assert json.loads(err)["error"] == "IoFailure"


def test_pe_curve_out_and_worst_case(capsys, cfg_path, tmp_path):
    out_path = tmp_path / "points.json"
    code, out, _ = run_cli(capsys, "pe-curve", "-c", cfg_path, "--paths", "4",
                           "--worst-case", "--out", str(out_path))
    assert code == 0
    assert out.startswith("mode=worst")
    saved = json.loads(out_path.read_text())
    assert saved["mode"] == "worst" and len(saved["points"]) == 1
    assert saved["points"][0]["n_paths"] == 4


def test_growth_json(capsys, cfg_path):
    code, out, _ = run_cli(capsys, "growth", "-c", cfg_path, "--horizon", "1500",
                           "--seeds", "2", "--format", "json")
    assert code == 0
    body = json.loads(out)
    assert len(body["per_seed"]) == 2
    assert body["target"] == pytest.approx(REF_C, abs=1e-12)


def test_mss_text(capsys, cfg_path):
    code, out, _ = run_cli(capsys, "mss", "-c", cfg_path, "--factors", "0.75,1.0",
                           "--horizon", "80", "--paths", "4")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("worst-case stable window: (0.783067")
    assert "UNSTABLE" in lines[1] and "rho=1.049" in lines[1]
    assert lines[2].endswith("stable  rho=0.6787  max|acl|=0.7465") or "stable" in lines[2]


def test_cheap_control_text(capsys, sk_cfg_path):
    code, out, _ = run_cli(capsys, "cheap-control", "-c", sk_cfg_path,
                           "--factors", "0.5,1.0", "--horizon", "60", "--paths", "8")
    assert code == 0
    assert "factor 0.5   UNSTABLE" in out
    assert "power 3" in out
    assert out.rstrip().endswith("best factor: 1")


def test_reproduce_small(capsys):
    code, out, _ = run_cli(capsys, "reproduce-paper-example", "--trials", "30")
    assert code == 0
    assert out.startswith("capacity: 1.5434425037")
    assert "codeword counts: [957000, 2048]" in out
    # the recorded block-capacity target is not met by the computed schedule
    block_line = next(l for l in out.splitlines()
                      if l.lstrip().startswith("block_capacity_bits:"))
    assert "computed 38.5861" in block_line and block_line.endswith("OUTSIDE")


def test_package_error_exits_1(capsys, tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(DTCSI_TOML.replace('scheme = "dtcsi_mux"', 'scheme = "nope"'))
    code, out, err = run_cli(capsys, "capacity", "-c", str(p))
    assert code == 1 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "ConfigError"
    assert "run.scheme" in payload["detail"]


def test_missing_config_file_exits_1(capsys, tmp_path):
    code, _, err = run_cli(capsys, "capacity", "-c", str(tmp_path / "absent.toml"))
    assert code == 1
    assert json.loads(err)["error"] == "IoFailure"


def test_bad_factors_exits_1(capsys, cfg_path):
    code, _, err = run_cli(capsys, "mss", "-c", cfg_path, "--factors", "a,b")
    assert code == 1
    assert json.loads(err)["error"] == "IoFailure"


def test_usage_errors_exit_2(cfg_path):
    with pytest.raises(SystemExit) as ei:
        main([])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["simulate"])  # missing required -c
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["simulate", "-c", cfg_path, "--format", "yaml"])
    assert ei.value.code == 2


def test_console_script(cfg_path):
    proc = subprocess.run(["fsmclab", "capacity", "-c", cfg_path, "--format", "json"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["bits_per_use"] == pytest.approx(REF_C, abs=1e-12)


# -- --server dispatch against a real socket ------------------------------------

@pytest.fixture(scope="module")
def live_server():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    config = uvicorn.Config("fsmclab.service.app:app", host="127.0.0.1", port=port,
                            log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 15
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("test server did not start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_server_dispatch_matches_local(capsys, cfg_path, live_server):
    code, out, _ = run_cli(capsys, "capacity", "-c", cfg_path, "--format", "json")
    assert code == 0
    local = json.loads(out)
    code, out, _ = run_cli(capsys, "capacity", "-c", cfg_path, "--format", "json",
                           "--server", live_server)
    assert code == 0
    assert json.loads(out) == local


def test_server_error_surfaces(capsys, tmp_path, live_server):
    p = tmp_path / "bad.toml"
    p.write_text(DTCSI_TOML.replace('scheme = "dtcsi_mux"', 'scheme = "nope"'))
    code, _, err = run_cli(capsys, "capacity", "-c", str(p), "--server", live_server)
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] == "IoFailure"
    assert "server returned 400" in payload["detail"]
    assert "ConfigError" in payload["detail"]


def test_unreachable_server(capsys, cfg_path):
    code, _, err = run_cli(capsys, "capacity", "-c", cfg_path,
                           "--server", "http://127.0.0.1:9")
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] == "IoFailure"
    assert "cannot reach server" in payload["detail"]
