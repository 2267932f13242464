import json
import os
import subprocess
import sys

import pytest

import dllm_decode as dd
from dllm_decode.cli import FIELD_SPECS, RunConfig, main
from dllm_decode.oracle import save_oracle_file


@pytest.fixture
def chain_file(tmp_path, vocab6):
    spec = dd.sticky_chain(vocab6, 0.85)
    path = str(tmp_path / "chain.json")
    save_oracle_file(path, spec, vocab6, symbols=["a", "b", "c", "d", "<eot>", "_"])
    return path


def run_cli(args, **kw):
    return subprocess.run(
        [sys.executable, "-m", "dllm_decode.cli", *args], capture_output=True, text=True, **kw
    )


def test_every_flag_maps_to_a_config_field():
    from dataclasses import fields

    config_fields = {f.name for f in fields(RunConfig)}
    spec_fields = {name for name, *_ in FIELD_SPECS}
    assert spec_fields == config_fields


def test_decode_deterministic_bytes(chain_file):
    args = [
        "decode", "--strategy", "tolerator", "--T", "8", "--backend", "oracle",
        "--oracle-spec", chain_file, "--prompt", "0,1", "--gen-len", "12",
        "--seed", "5", "--mode", "categorical",
    ]
    r1, r2 = run_cli(args), run_cli(args)
    assert r1.returncode == 0
    assert r1.stdout == r2.stdout


def test_decode_stage_split_in_trace(chain_file, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    r = run_cli(
        [
            "decode", "--strategy", "tolerator", "--T", "32", "--rho", "0.5",
            "--backend", "oracle", "--oracle-spec", chain_file, "--prompt", "0",
            "--gen-len", "32", "--mode", "categorical", "--trace-out", trace,
        ]
    )
    assert r.returncode == 0
    _, traces = dd.read_trace(trace)
    fill = [t for t in traces if t.stage == "fillup"]
    refine = [t for t in traces if t.stage == "refine"]
    assert len(fill) == 16
    assert len(refine) == 2 * 16


def test_decode_single_step_boundary(chain_file):
    r = run_cli(
        [
            "decode", "--strategy", "vanilla", "--T", "1", "--backend", "oracle",
            "--oracle-spec", chain_file, "--prompt", "2", "--gen-len", "8",
        ]
    )
    assert r.returncode == 0
    ids = [int(t) for t in r.stdout.splitlines()[0].split()]
    assert len(ids) == 9
    assert 5 not in ids  # no mask token in the output


def test_config_file_and_flag_precedence(chain_file, tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"strategy": "vanilla", "T": 4, "gen_len": 6, "prompt": "0"}))
    r = run_cli(["decode", "--config", str(cfg_path), "--oracle-spec", chain_file, "--gen-len", "10"])
    assert r.returncode == 0
    assert len(r.stdout.splitlines()[0].split()) == 11  # flag overrode config gen_len


def test_env_var_overrides_config_but_not_flag(chain_file, tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"strategy": "vanilla", "T": 4, "gen_len": 6, "prompt": "0"}))
    env = dict(os.environ, DLLM_DECODE_GEN_LEN="8")
    r = run_cli(["decode", "--config", str(cfg_path), "--oracle-spec", chain_file], env=env)
    assert len(r.stdout.splitlines()[0].split()) == 9  # env beat config
    r = run_cli(
        ["decode", "--config", str(cfg_path), "--oracle-spec", chain_file, "--gen-len", "12"], env=env
    )
    assert len(r.stdout.splitlines()[0].split()) == 13  # flag beat env


def test_config_error_exit_code(tmp_path):
    r = run_cli(["decode", "--prompt", "0", "--gen-len", "4"])  # no oracle spec
    assert r.returncode == 2
    assert "error:" in r.stderr


def test_backend_connection_error_exit_code():
    r = run_cli(
        ["decode", "--backend", "remote", "--endpoint", "127.0.0.1:1", "--prompt", "0", "--gen-len", "4"]
    )
    assert r.returncode == 3


def test_trace_render_text_and_html(chain_file, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    run_cli(
        [
            "decode", "--strategy", "tolerator", "--T", "8", "--backend", "oracle",
            "--oracle-spec", chain_file, "--prompt", "0,0", "--gen-len", "10",
            "--mode", "categorical", "--seed", "1", "--trace-out", trace,
        ]
    )
    r = run_cli(["trace-render", "--trace", trace, "--oracle-spec", chain_file])
    assert r.returncode == 0
    assert "decode order" in r.stdout
    assert "refinement edits" in r.stdout
    out_html = str(tmp_path / "t.html")
    r = run_cli(["trace-render", "--trace", trace, "--format", "html", "--out", out_html])
    assert r.returncode == 0
    assert "<html>" in open(out_html).read()


def test_trace_render_malformed_exit_code(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    r = run_cli(["trace-render", "--trace", str(bad)])
    assert r.returncode == 5


def test_trace_render_no_refine_shows_no_diff(chain_file, tmp_path):
    trace = str(tmp_path / "v.jsonl")
    run_cli(
        [
            "decode", "--strategy", "vanilla", "--T", "4", "--backend", "oracle",
            "--oracle-spec", chain_file, "--prompt", "0", "--gen-len", "8",
            "--trace-out", trace,
        ]
    )
    r = run_cli(["trace-render", "--trace", trace])
    assert r.returncode == 0
    assert "refinement edits" not in r.stdout


def test_sweep_command_writes_reports(chain_file, tmp_path):
    csv_out = str(tmp_path / "records.csv")
    report = str(tmp_path / "report.json")
    r = run_cli(
        [
            "sweep", "--oracle-spec", chain_file, "--strategies", "vanilla,rcr",
            "--T-values", "2,4", "--seeds", "0,1,2", "--suite-n", "3",
            "--suite-len", "16", "--suite-prompt-len", "4",
            "--csv-out", csv_out, "--report-out", report,
        ]
    )
    assert r.returncode == 0, r.stderr
    table = dd.ResultTable.from_csv(csv_out)
    assert len(table.records) == 2 * 2 * 3 * 3
    assert set(l.split(",")[0] for l in open(csv_out).read().splitlines()[1:]) == {"vanilla", "rcr"}
    assert json.loads(open(report).read())["aggregates"]


def test_ablate_command(chain_file, tmp_path):
    r = run_cli(
        [
            "ablate", "--oracle-spec", chain_file, "--fill-steps", "4",
            "--R-values", "0,2", "--seeds", "0,1,2", "--suite-n", "2",
            "--suite-len", "16", "--suite-prompt-len", "4",
        ]
    )
    assert r.returncode == 0, r.stderr
    assert "tolerator_R0" in r.stdout
    assert "tolerator_R2" in r.stdout


def test_serve_oracle_and_remote_decode(chain_file):
    import socket
    import time

    # pick a free port, then serve on it
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "dllm_decode.cli", "serve-oracle",
            "--oracle-spec", chain_file, "--endpoint", f"127.0.0.1:{port}",
        ],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        assert "serving oracle" in proc.stdout.readline()
        r_remote = run_cli(
            [
                "decode", "--backend", "remote", "--endpoint", f"127.0.0.1:{port}",
                "--strategy", "tolerator", "--T", "6", "--prompt", "0,1",
                "--gen-len", "8", "--seed", "4", "--mode", "categorical",
            ]
        )
        assert r_remote.returncode == 0, r_remote.stderr
    finally:
        proc.terminate()
        proc.wait(timeout=10)
