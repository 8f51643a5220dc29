from __future__ import annotations

import csv
import json

import pytest

from gradphi.cli import ConfigError, config_parse, main
from gradphi.potentials import LogCosh, Quadratic

GFF_INI = """\
[lattice]
d = 2
n = 1-5

[potential]
spec = quadratic:1.0

[tilt]
p = 0, 0
q = 0, 0
"""

SAMPLE_INI = """\
[lattice]
d = 2
n = 1

[potential]
spec = logcosh:1.0

[tilt]
p = 0.5, 0.25

[chain]
steps = 600
burn_in = 100
n_chains = 2
seed = 7
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _run(tmp_path, sub, text, out="out", extra=()):
    cfg = _write(tmp_path, text)
    code = main([sub, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_parse_potential_and_levels():
    cfg = config_parse("[lattice]\nd = 2\nn = 2, 4\n[potential]\nspec = logcosh:1.0\n")
    assert cfg.potential == LogCosh(1.0)
    assert cfg.levels == (2, 4)
    cfg = config_parse(GFF_INI)
    assert cfg.potential == Quadratic(1.0) and cfg.levels == (1, 2, 3, 4, 5)


@pytest.mark.parametrize("text", ["", "   \n# nothing\n", "[lattice]\nd = 1\n", "[lattice]\nd = 2\nn = 6\n",
                                  "[lattice]\nd = 3\nn = 4\n", "[potential]\nspec = cosh:1\n",
                                  "[tilt]\np = 1, 2, 3\n"])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        config_parse(text)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as exc:
        config_parse("[lattice]\nd = 2\nsize = 4\n")
    assert exc.value.line == 3 and exc.value.key == "size"
    assert "line 3" in str(exc.value)


def test_empty_config_exits_with_usage_status(tmp_path, capsys):
    code, _ = _run(tmp_path, "gff-exact", "")
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_gff_exact_table(tmp_path):
    code, out = _run(tmp_path, "gff-exact", GFF_INI)
    assert code == 0
    rows = _rows(out / "gff_exact.csv")
    assert rows[0] == ["d", "n", "beta", "p_0", "p_1", "nu", "q_0", "q_1", "nustar"]
    assert len(rows) == 6
    assert float(rows[1][5]) == pytest.approx(0.013420248626138356, abs=1e-12)
    assert float(rows[5][8]) == pytest.approx(-0.0072143794058833399, abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["summary"]["overall"] == "pass" and "gff_exact.csv" in manifest["outputs"]


def test_reruns_are_bit_identical(tmp_path):
    _, a = _run(tmp_path, "sample", SAMPLE_INI, out="a")
    _, b = _run(tmp_path, "sample", SAMPLE_INI, out="b")
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["outputs"] and ma["outputs"] == mb["outputs"]
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_seed_override(tmp_path):
    _, a = _run(tmp_path, "sample", SAMPLE_INI, out="a")
    _, b = _run(tmp_path, "sample", SAMPLE_INI, out="b", extra=("--seed-override", "8"))
    mb = json.loads((b / "manifest.json").read_text())
    assert mb["seeds"]["chain"] == 8
    assert (a / "trace.csv").read_bytes() != (b / "trace.csv").read_bytes()
    assert _rows(b / "estimates.csv")[0] == ["observable", "component", "mean", "stderr", "ess", "iact"]


def test_time_cap_exits_with_runtime_status(tmp_path):
    code, out = _run(tmp_path, "gff-exact", GFF_INI, extra=("--cap-minutes", "0"))
    assert code == 3
    assert "error" in json.loads((out / "manifest.json").read_text())["summary"]


def test_report_aggregates_bundles(tmp_path):
    # zero tilt keeps every level on the exact Gaussian oracle
    code_d, d_out = _run(tmp_path, "defects", GFF_INI, out="defects")
    code_r, r_out = _run(tmp_path, "rate", GFF_INI, out="rate")
    assert code_d == 0 and code_r == 0
    assert _rows(d_out / "defects.csv")[0] == ["n", "p_0", "p_1", "tau", "stderr"]
    code = main(["report", str(d_out), str(r_out), "--out", str(tmp_path / "summary")])
    assert code == 0
    summary = _rows(tmp_path / "summary" / "summary.csv")
    assert summary[0] == ["check_id", "status", "provenance", "margin", "constants", "source"]
    assert len(summary) > 2 and all(row[1] == "pass" for row in summary[1:])
    assert _rows(tmp_path / "summary" / "series.csv")[0] == ["check_id", "level", "value", "stderr"]
