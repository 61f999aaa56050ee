import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eemmix.cli import main
from eemmix.core import EemGrid, ValidationError, WavelengthAxis
from eemmix.io import (
    load_dataset,
    load_manifest,
    parse_eem_csv,
    read_table,
    write_eem_csv,
    write_scene,
)
from eemmix.synth import study_like_scene

SMALL_EX = WavelengthAxis(240, 10, 12)
SMALL_EM = WavelengthAxis(300, 6, 40)


def small_scene(**kw):
    return study_like_scene(excitation=SMALL_EX, emission=SMALL_EM, **kw)


def test_parse_small_grid(tmp_path):
    f = tmp_path / "g.csv"
    f.write_text("# note\nem\\ex,240,245\n300,1.5,2\n302,,4e-1\n")
    g = parse_eem_csv(f)
    assert g.excitation == WavelengthAxis(240, 5, 2)
    assert g.emission == WavelengthAxis(300, 2, 2)
    assert g.mask.tolist() == [[True, True], [False, True]]
    assert g.intensities[0].tolist() == [1.5, 2.0] and g.intensities[1, 1] == 0.4


@pytest.mark.parametrize("text, match", [
    ("em\\ex,245,240\n300,1,2\n", "not ascending"),
    ("em\\ex,240,245\n300,1\n", r"g\.csv:2: ragged"),
    ("em\\ex,240,245\n300,1,abc\n", r"g\.csv:2:3: non-numeric"),
    ("ex,240,245\n300,1,2\n", "first cell"),
    ("em\\ex,240,245\n", "at least one"),
    ("em\\ex,240,245,251\n300,1,2,3\n", "evenly spaced"),
])
def test_parse_errors(tmp_path, text, match):
    f = tmp_path / "g.csv"
    f.write_text(text)
    with pytest.raises(ValidationError, match=match):
        parse_eem_csv(f)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_write_parse_roundtrip(tmp_path_factory, n_ex, n_em, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((n_em, n_ex)) < 0.8
    vals = np.where(mask, rng.lognormal(0, 3, (n_em, n_ex)), np.nan)
    grid = EemGrid(WavelengthAxis(240.5, 2.5, n_ex), WavelengthAxis(300, 0.1, n_em), vals, mask)
    f = tmp_path_factory.mktemp("rt") / "g.csv"
    write_eem_csv(grid, f, comment="# hi")
    back = parse_eem_csv(f)
    assert np.array_equal(back.mask, mask)
    assert np.array_equal(back.intensities[mask], vals[mask])
    assert back.excitation.count == n_ex and back.emission.count == n_em


def test_scene_export_reloads(tmp_path):
    scene = small_scene(seed=2)
    path = write_scene(scene, tmp_path, {"seed": 2})
    data = load_dataset(load_manifest(path))
    assert [s.sample_id for s in data.endmembers] == ["s1", "s2", "s3"]
    for got, want in zip(data.samples, scene.samples):
        np.testing.assert_array_equal(got.matrix, want.matrix)
        assert (got.weights is None) == (want.weights is None)
        if want.weights is not None:
            np.testing.assert_array_equal(got.weights, want.weights)


def test_blank_cells_shrink_common_mask(tmp_path):
    path = write_scene(small_scene(seed=1), tmp_path)
    f = tmp_path / "m3_r2.csv"
    lines = f.read_text().splitlines()
    cells = lines[-1].split(",")
    cells[1] = ""
    lines[-1] = ",".join(cells)
    f.write_text("\n".join(lines) + "\n")
    data = load_dataset(load_manifest(path))
    assert data.dropped_pixels == 1
    assert len({s.matrix.shape for s in data.samples}) == 1


def _manifest(tmp_path, doc):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.parametrize("doc, match", [
    ({"samples": [{"id": "a", "role": "endmember"}], "files": [
        {"path": "x.csv", "sample": "a", "replicate": 2}]}, "1..n"),
    ({"samples": [{"id": "a", "role": "endmember"},
                  {"id": "m", "role": "mixture", "weights": [0.5, 0.5]}], "files": []}, "weights"),
    ({"samples": [{"id": "a", "role": "source"}], "files": []}, "role"),
    ({"samples": [{"id": "a", "role": "endmember"}], "files": [
        {"path": "missing.csv", "sample": "a", "replicate": 1}]}, "not found"),
    ({"samples": []}, "missing"),
])
def test_manifest_validation(tmp_path, doc, match):
    (tmp_path / "x.csv").write_text("em\\ex,240\n300,1\n")
    with pytest.raises(ValidationError, match=match):
        load_manifest(_manifest(tmp_path, doc))


def test_cli_missing_manifest_exit_2(tmp_path, capsys):
    assert main(["variation", "--manifest", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) == 2
    assert "manifest not found" in capsys.readouterr().err


def test_cli_unknown_flag_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["variation", "--bogus"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    write_scene(small_scene(seed=4), d, {"seed": 4})
    return d


def test_report_is_deterministic(scene_dir, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["report", "--manifest", str(scene_dir / "manifest.json"),
                     "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
        if name != "summary.json":
            assert (outs[0] / name).read_text().startswith("# eemmix ")
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert set(summary["files"]) == set(names) - {"summary.json"}


def test_cli_option_overrides(scene_dir, tmp_path):
    out = tmp_path / "o"
    assert main(["mixtest", "--manifest", str(scene_dir / "manifest.json"), "--out", str(out),
                 "--alpha", "0.1", "--mask-rule", "offset_band:20"]) == 0
    header = (out / "mixtest_summary.tsv").read_text().splitlines()[0]
    opts = json.loads(header.split(" ", 3)[3])
    assert opts["alpha"] == 0.1 and opts["mask_rule"] == "offset_band:20"


def test_cli_noiseless_unmix_has_zero_spread(tmp_path):
    d = tmp_path / "clean"
    write_scene(small_scene(sigma_a=0.0, sigma_e=0.0), d)
    assert main(["unmix", "--manifest", str(d / "manifest.json"), "--out", str(tmp_path / "o")]) == 0
    cols, rows = read_table(tmp_path / "o" / "abundance_summary.tsv")
    for row in rows:
        rec = dict(zip(cols, row))
        for e in ("s1", "s2", "s3"):
            assert float(rec[f"{e}_mean"]) == pytest.approx(float(rec[f"{e}_b"]), abs=1e-10)
            assert float(rec[f"{e}_sd"]) < 1e-10
        assert rec["combos"] == "81"


def test_cli_null_scene_rejects_little(tmp_path):
    d = tmp_path / "null"
    assert main(["simulate", "--out", str(d), "--seed", "5"]) == 0
    assert main(["mixtest", "--manifest", str(d / "manifest.json"), "--out", str(tmp_path / "o")]) == 0
    cols, rows = read_table(tmp_path / "o" / "mixtest_summary.tsv")
    fractions = [float(dict(zip(cols, r))["fraction"]) for r in rows]
    assert np.mean(fractions) <= 0.07


def test_cli_simulate_planted_detected(tmp_path):
    d = tmp_path / "planted"
    assert main(["simulate", "--out", str(d), "--seed", "1", "--perturb-fraction", "0.05"]) == 0
    assert main(["mixtest", "--manifest", str(d / "manifest.json"), "--out", str(tmp_path / "o")]) == 0
    cols, rows = read_table(tmp_path / "o" / "mixtest_summary.tsv")
    higher = [int(dict(zip(cols, r))["higher"]) for r in rows]
    assert min(higher) >= 0.9 * round(0.05 * 5307)
