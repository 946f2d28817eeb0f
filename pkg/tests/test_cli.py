import json

import pytest

from kernelgen.cli import main
from kernelgen.dataset import read_corpus

from conftest import CC


def _gen(tmp_path, name="c.jsonl", count=10, seed=1):
    out = tmp_path / name
    rc = main(["gen", "--count", str(count), "--seed", str(seed), "--out", str(out)])
    assert rc == 0
    return out


def test_gen_writes_count_lines(tmp_path):
    out = _gen(tmp_path, count=10)
    assert len(out.read_text().splitlines()) == 10


def test_gen_rerun_is_byte_identical(tmp_path):
    a = _gen(tmp_path, "a.jsonl", count=8, seed=3)
    b = _gen(tmp_path, "b.jsonl", count=8, seed=3)
    assert a.read_bytes() == b.read_bytes()


def test_gen_count_zero_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["gen", "--count", "0", "--out", str(tmp_path / "x.jsonl")])
    assert err.value.code == 2


def test_gen_trace_dir(tmp_path):
    out = tmp_path / "c.jsonl"
    traces = tmp_path / "traces"
    rc = main(
        ["gen", "--count", "6", "--seed", "0", "--out", str(out), "--trace-dir", str(traces)]
    )
    assert rc == 0
    # level-2 pairs get traces; level-1 singles do not
    assert len(list(traces.glob("*.trace.json"))) == 4


def test_validate_fresh_corpus_passes(tmp_path):
    out = _gen(tmp_path)
    assert main(["validate", "--corpus", str(out)]) == 0


def test_validate_detects_corrupted_edge(tmp_path, capsys):
    out = _gen(tmp_path, count=6, seed=2)
    lines = out.read_text().splitlines()
    record = json.loads(lines[1])
    record["graph"]["edges"][0][0] = 999  # dangling producer id
    lines[1] = json.dumps(record, sort_keys=True, separators=(",", ":"))
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--corpus", str(bad)]) == 1
    err = capsys.readouterr().err
    assert f"pair {record['pair_id']}" in err


def test_validate_detects_injected_framework_token(tmp_path, capsys):
    out = _gen(tmp_path, count=6, seed=2)
    lines = out.read_text().splitlines()
    record = json.loads(lines[0])
    record["cpu_src"] = record["cpu_src"].replace(
        "void", "/* (((TVMValue*)args)[1].v_handle) */ void", 1
    )
    lines[0] = json.dumps(record, sort_keys=True, separators=(",", ":"))
    bad = tmp_path / "tok.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--corpus", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "TVM" in err


def test_stats_histograms(tmp_path, capsys):
    out = _gen(tmp_path, count=10, seed=4)
    assert main(["stats", "--corpus", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["pairs"] == 10
    assert payload["level1"] + payload["level2"] == 10
    assert sum(payload["operator_histogram"].values()) == payload["operator_nodes"]


def test_stats_ops_catalog(capsys):
    assert main(["stats", "--ops"]) == 0
    catalog = json.loads(capsys.readouterr().out)
    assert len(catalog) == 18
    assert {"name", "category", "arity", "attrs"} <= set(catalog[0])


def test_stats_without_inputs_is_usage_error():
    assert main(["stats"]) == 2


def test_bench_package_cli(tmp_path):
    out = _gen(tmp_path, count=30, seed=0)
    suite_dir = tmp_path / "suite"
    rc = main(
        [
            "bench", "package",
            "--corpus", str(out),
            "--level1", "4",
            "--level2", "6",
            "--seed", "9",
            "--out", str(suite_dir),
        ]
    )
    assert rc == 0
    manifest = json.loads((suite_dir / "manifest.json").read_text())
    assert manifest["level1_count"] == 4
    assert manifest["level2_count"] == 6


def test_bench_package_insufficient_is_error(tmp_path):
    out = _gen(tmp_path, count=6, seed=0)
    rc = main(
        [
            "bench", "package",
            "--corpus", str(out),
            "--level1", "50",
            "--level2", "0",
            "--out", str(tmp_path / "s"),
        ]
    )
    assert rc == 1


@pytest.mark.skipif(CC is None, reason="no C compiler")
def test_eval_cli_self_candidates(tmp_path, capsys):
    out = _gen(tmp_path, count=4, seed=7)
    cands = tmp_path / "cands"
    cands.mkdir()
    for pair in read_corpus(out):
        (cands / f"{pair.pair_id}.c").write_text(pair.cpu_src)
    report_path = tmp_path / "report.json"
    rc = main(
        [
            "eval",
            "--pairs", str(out),
            "--candidates", str(cands),
            "--cc", CC,
            "--jobs", "2",
            "--no-timing",
            "--report", str(report_path),
        ]
    )
    assert rc == 0
    payload = json.loads(report_path.read_text())
    assert payload["aggregate"]["execute_pass"] == 1.0
    assert len(payload["pairs"]) == 4


@pytest.mark.skipif(CC is None, reason="no C compiler")
def test_eval_exit_zero_even_when_candidates_fail(tmp_path):
    out = _gen(tmp_path, count=2, seed=9)
    cands = tmp_path / "none"
    cands.mkdir()
    rc = main(
        [
            "eval",
            "--pairs", str(out),
            "--candidates", str(cands),
            "--cc", CC,
            "--no-timing",
            "--report", str(tmp_path / "r.json"),
        ]
    )
    assert rc == 0
