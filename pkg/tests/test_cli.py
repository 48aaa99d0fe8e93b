import csv
import io
import json

import pytest

from causal_lens.cli import main


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _jsonl(path):
    return [json.loads(s) for s in path.read_text().splitlines()]


@pytest.fixture
def tp_file(tmp_path, capsys):
    path = tmp_path / "tp.jsonl"
    code, _, err = _run(["generate", "--points", "2", "--fan", "10", "--seed", "3", "-o", str(path)], capsys)
    assert code == 0
    assert "generated time_probe=" in err
    return path


def test_generate_is_deterministic(tmp_path, tp_file, capsys):
    again = tmp_path / "again.jsonl"
    _run(["generate", "--points", "2", "--fan", "10", "--seed", "3", "-o", str(again)], capsys)
    assert again.read_bytes() == tp_file.read_bytes()


def test_reconstruct_time_probe(tp_file, capsys):
    code, out, _ = _run(["reconstruct", str(tp_file)], capsys)
    assert code == 0
    lines = [json.loads(s) for s in out.splitlines()]
    assert lines[0]["kind"] == "report"
    groups = [d for d in lines if d["kind"] == "group"]
    assert len(groups) == 2
    assert all(g["size"] == 10 and g["fitted_g"] is not None for g in groups)
    assert sorted(len(g["point_ids"]) for g in groups) == [1, 1]


def test_reconstruct_data_only(tp_file, capsys):
    code, out, _ = _run(["reconstruct", str(tp_file), "--data-only"], capsys)
    assert code == 0
    groups = [json.loads(s) for s in out.splitlines() if '"group"' in s]
    assert all(g["fitted_g"] is None for g in groups)


def test_shadow_pipeline_and_plotdata(tmp_path, capsys):
    data, report, table = tmp_path / "s.jsonl", tmp_path / "r.jsonl", tmp_path / "apex.csv"
    argv = ["generate", "--model", "conformal-block", "--amp", "0.2", "--points", "2", "--fan", "6",
            "--kinds", "shadow", "-o", str(data)]
    assert _run(argv, capsys)[0] == 0
    assert _run(["reconstruct", str(data), "-o", str(report)], capsys)[0] == 0
    kinds = {d["kind"] for d in _jsonl(report)}
    assert {"report", "apex"} <= kinds
    assert _run(["plotdata", str(report), "--kind", "apex", "-o", str(table)], capsys)[0] == 0
    rows = list(csv.reader(io.StringIO(table.read_text())))
    assert rows[0] == ["shadow_id", "spread", "x1", "x2", "x3"]
    assert len(rows) == 3


def test_scatter_pipeline(tmp_path, capsys):
    data = tmp_path / "sc.jsonl"
    assert _run(["generate", "--points", "3", "--fan", "6", "--kinds", "scatter", "-o", str(data)], capsys)[0] == 0
    code, out, _ = _run(["reconstruct", str(data)], capsys)
    assert code == 0
    shadows = [json.loads(s) for s in out.splitlines() if '"shadow"' in s]
    assert len(shadows) == 3
    assert all(s["source"] == "clique" for s in shadows)


def test_compare_flat_and_conformal(tmp_path, capsys):
    data = tmp_path / "s.jsonl"
    _run(["generate", "--points", "2", "--fan", "6", "--kinds", "shadow", "-o", str(data)], capsys)
    code, out, _ = _run(["compare", str(data), "--model2", "conformal-block", "--model2-param", "amp=0.2"], capsys)
    assert code == 0
    lines = [json.loads(s) for s in out.splitlines()]
    assert sum(d["kind"] == "pair" for d in lines) == 2
    assert "PASS" in json.dumps(lines[-1])


def test_compare_flat_and_cylinder_fails(tmp_path, capsys):
    data = tmp_path / "s.jsonl"
    _run(["generate", "--points", "2", "--fan", "6", "--kinds", "shadow", "-o", str(data)], capsys)
    code, out, err = _run(["compare", str(data), "--model2", "cylinder"], capsys)
    assert code == 5
    assert "FAIL" in out
    assert "error:" in err


def test_config_file_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# generation settings\npoints = 1\nfan = 9\nseed = 2\n")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert _run(["generate", "--config", str(cfg), "-o", str(a)], capsys)[0] == 0
    assert {d.get("point_id") for d in _jsonl(a)[1:]} == {0}
    assert _jsonl(a)[0]["gen"]["fan"] == 9
    assert _run(["generate", "--config", str(cfg), "--fan", "8", "-o", str(b)], capsys)[0] == 0
    assert _jsonl(b)[0]["gen"]["fan"] == 8


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = _run(["generate", "--config", str(cfg)], capsys)
    assert code == 2
    assert "colour" in err


@pytest.mark.parametrize(
    "argv, code",
    [
        (["generate", "--points", "0"], 2),
        (["generate", "--model", "cylinder", "--n", "4"], 2),
        (["generate", "--kinds", "gossip"], 2),
        (["reconstruct", "/nonexistent/file.jsonl"], 6),
        (["plotdata", "/nonexistent/report.jsonl"], 6),
    ],
)
def test_exit_codes(argv, code, capsys):
    assert _run(argv, capsys)[0] == code


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--model", "torus"])
    assert exc.value.code == 2


def test_malformed_data_exits_4(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"kind": "header"}\n')
    code, _, err = _run(["reconstruct", str(bad)], capsys)
    assert code == 4
    assert "line 1" in err


def test_plotdata_mixed_kinds_need_kind(tmp_path, capsys):
    rep = tmp_path / "r.jsonl"
    rep.write_text(
        json.dumps({"kind": "group", "label": 0, "size": 1, "x": [0.5, 0.5, 0.5]}) + "\n"
        + json.dumps({"kind": "apex", "shadow_id": 0, "spread": 0.0, "x": [0.5, 0.5, 0.5]}) + "\n"
    )
    assert _run(["plotdata", str(rep)], capsys)[0] == 4
    code, out, _ = _run(["plotdata", str(rep), "--kind", "group"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "label,size,x1,x2,x3"


def test_selftest_subset(capsys):
    code, out, _ = _run(["selftest", "--only", "Wronskian"], capsys)
    assert code == 0
    assert "1/1 checks passed" in out
    assert _run(["selftest", "--only", "no-such-check"], capsys)[0] == 2
