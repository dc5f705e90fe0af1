import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fraclod import cli
from fraclod.experiments.config import ConfigError, config_from_dict, dump_config, load_config, scaled
from fraclod.experiments.drivers import decay_slope, run_dual_norm_table, run_mesh_info, run_wave
from fraclod.experiments.output import (ResultTable, csv_text, emit_basis_csv, emit_csv, emit_svg_plot,
                                        emit_vector_csv, read_csv)
from fraclod.sparse_linalg import SingularPatchError

from conftest import CONFIGS


def small_wave(**over):
    d = {
        "kind": "wave", "name": "w",
        "mesh": {"coarse_n": [2, 4], "fine_n": 16},
        "geometry": "gamma_vertical_half",
        "coefficient": {"n": 16, "seeds": [1]},
        "interface": {"A": 2.0, "B": 0.1, "f": [{"kind": "box", "value": 1.0, "box": [0.375, 0.625, 0.375, 0.625]}]},
        "source": {"f": {"kind": "box", "value": 1.0, "box": [0.375, 0.625, 0.375, 0.625]}, "B": 1.0},
        "k": [1],
        "wave": {"tau": 0.01, "t_end": 0.1, "sample_times": [0.05, 0.1]},
    }
    d.update(over)
    return d


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


# ---------------------------------------------------------------- config validation

def test_shipped_configs_load():
    for p in sorted(CONFIGS.glob("*.json")) + sorted((CONFIGS / "full").glob("*.json")):
        cfg = load_config(p)
        assert cfg.name


def test_name_defaults_to_file_stem(tmp_path):
    d = small_wave()
    d.pop("name")
    assert load_config(write_json(tmp_path / "abc.json", d)).name == "abc"


@pytest.mark.parametrize("patch,match", [
    ({"colour": 1}, "unknown keys"),
    ({"mesh": {"coarse_n": [2], "fine_n": 16, "fine": 3}}, "unknown keys"),
    ({"mesh": [2, 16]}, "expected an object"),
    ({"kind": "heat"}, "kind"),
    ({"geometry": "circle"}, "unknown geometry"),
    ({"fracture_file": "missing.frac"}, "exactly one"),
    ({"mesh": {"coarse_n": [3], "fine_n": 16}}, "power-of-two"),
    ({"mesh": {"coarse_n": [], "fine_n": 16}}, "empty"),
    ({"coefficient": {"lo": 0.9, "hi": 0.1}}, "coefficient.hi"),
    ({"coefficient": {"seeds": [-1]}}, "seeds"),
    ({"interface": {"A": -1.0}}, "interface.A"),
    ({"interface": {"f": [{"kind": "formula", "name": "exp(x)"}]}}, "interface.f"),
    ({"interpolation": {"variants": ["nodal"]}}, "variants"),
    ({"k": [0]}, "k must"),
    ({"wave": {"tau": 0.03, "t_end": 0.1, "sample_times": [0.1]}}, "multiple"),
    ({"wave": {"tau": 0.01, "t_end": 0.1, "sample_times": [0.105]}}, "time grid"),
    ({"wave": {"tau": 0.01, "t_end": 0.1, "sample_times": [0.1], "switch_off": 0.2}}, "switch_off"),
    ({"scale": 2.0}, "scale"),
    ({"workers": 0}, "workers"),
])
def test_invalid_configs(patch, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(small_wave(**patch))


def test_missing_kind():
    d = small_wave()
    d.pop("kind")
    with pytest.raises(ConfigError, match="kind"):
        config_from_dict(d)


def test_missing_files(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.json")
    d = small_wave(geometry=None, fracture_file="nowhere.frac")
    with pytest.raises(ConfigError, match="does not exist"):
        config_from_dict(d, tmp_path)
    conv = json.loads((CONFIGS / "convergence.json").read_text())
    conv["mesh"]["file"] = "meshes/absent.msh"
    with pytest.raises(ConfigError, match="does not exist"):
        config_from_dict(conv, CONFIGS)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{kind: wave")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_dual_config_arc_must_hit_triangle():
    with pytest.raises(ConfigError):
        config_from_dict({"kind": "dual_norm_table", "dual": {"shapes": [3], "a": [2.0]}})


def test_dump_round_trip(tmp_path):
    cfg = load_config(CONFIGS / "wave.json")
    dump_config(cfg, tmp_path / "w.json")
    back = load_config(tmp_path / "w.json")
    assert back.to_dict() == cfg.to_dict()


# ---------------------------------------------------------------- scaling

def test_scaled_structured():
    cfg = load_config(CONFIGS / "decay.json")
    s = scaled(cfg, 0.25)
    assert (s.mesh.fine_n, s.mesh.coarse_n, s.coefficient.n) == (16, [4], 16)
    assert cfg.mesh.fine_n == 64          # original untouched


def test_scaled_identity_and_bounds():
    cfg = load_config(CONFIGS / "wave.json")
    assert scaled(cfg, 1.0).to_dict() == {**cfg.to_dict(), "scale": 1.0}
    for bad in (0.0, 1.5, math.nan):
        with pytest.raises(ConfigError):
            scaled(cfg, bad)


def test_scaled_keeps_nesting():
    cfg = load_config(CONFIGS / "wave.json")
    s = scaled(cfg, 1 / 16)
    assert s.mesh.fine_n == 8
    assert all(s.mesh.fine_n % n == 0 and n >= 2 for n in s.mesh.coarse_n)


def test_scaled_convergence():
    cfg = load_config(CONFIGS / "convergence.json")
    s = scaled(cfg, 0.25)
    assert s.mesh.refinements == 2 and s.k == [2, 2] and s.coefficient.level == 1


# ---------------------------------------------------------------- tables and files

def test_result_table_checks():
    with pytest.raises(ValueError):
        ResultTable(["a", "a"])
    t = ResultTable(["a", "b"])
    with pytest.raises(ValueError):
        t.add(1)
    t.add(1, "x")
    t.add(2, "y")
    assert t.where(b="y").rows == [(2, "y")] and t.column("a") == [1, 2] and len(t) == 2


def test_empty_table_header_only(tmp_path):
    p = emit_csv(ResultTable(["H", "error"]), tmp_path / "e.csv")
    assert p.read_bytes() == b"H,error\n"
    assert len(read_csv(p)) == 0


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_csv_round_trip(values):
    t = ResultTable(["i", "v"], [(i, v) for i, v in enumerate(values)])
    with tempfile.TemporaryDirectory() as d:
        back = read_csv(emit_csv(t, Path(d) / "t.csv"))
    for v, w in zip(values, back.column("v")):
        assert abs(v - w) <= 1e-15 * max(1.0, abs(v))


def test_csv_format():
    t = ResultTable(["n", "x", "s", "flag"], [(3, 0.1, "fracture-aware", True), (4, math.nan, "b", False)])
    assert csv_text(t) == "n,x,s,flag\n3,0.10000000000000001,fracture-aware,1\n4,nan,b,0\n"


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_csv(ResultTable(["a"]), tmp_path / "no" / "such" / "dir.csv")


def test_vector_and_basis_csv(tmp_path):
    v = emit_vector_csv([0.5, -1.0], tmp_path / "v.csv")
    assert v.read_text() == "dof,value\n0,0.5\n1,-1\n"
    with pytest.raises(ValueError):
        emit_vector_csv([1.0], tmp_path / "x.csv", dofs=[0, 1])
    B = sp.csr_matrix(np.array([[0.0, 2.0], [1.0, 0.0], [3.0, 4.0]]))
    b = emit_basis_csv(B, tmp_path / "b.csv", nodes=[7, 9])
    assert b.read_text() == "node,dof,value\n7,1,1\n7,2,3\n9,0,2\n9,2,4\n"


def test_svg_plot(tmp_path):
    t = ResultTable(["H", "error", "series"], [(0.5, 1.0, "a"), (0.25, 0.5, "a"), (0.5, 2.0, "b"), (0.25, math.nan, "b")])
    p1 = emit_svg_plot(t, "H", ["error"], tmp_path / "a.svg", logx=True, logy=True, group="series")
    p2 = emit_svg_plot(t, "H", ["error"], tmp_path / "b.svg", logx=True, logy=True, group="series")
    text = p1.read_text()
    assert "<svg" in text and "<path" in text
    assert p1.read_bytes() == p2.read_bytes()
    with pytest.raises(KeyError):
        emit_svg_plot(t, "H", ["missing"], tmp_path / "c.svg")


def test_decay_slope_helper():
    t = ResultTable(["variant", "layer", "energy", "sup"])
    for m in range(6):
        t.add("v", m, math.exp(-0.7 * m + 1), 1.0)
    t.add("w", 0, 1.0, 1.0)
    assert decay_slope(t, "v", 2, 5) == pytest.approx(-0.7, rel=1e-12)
    with pytest.raises(ValueError):
        decay_slope(t, "w", 2, 5)


# ---------------------------------------------------------------- drivers

@pytest.fixture(scope="module")
def dual_table():
    return run_dual_norm_table(load_config(CONFIGS / "dual_norms.json"))


def _row(table, shape, a):
    return table.where(shape=shape, a=a).rows[0]


def test_dual_norms_shape1_a20(dual_table):
    _, _, p1, p2, _ = _row(dual_table, 1, 20.0)
    assert p1 == pytest.approx(8.9e1, rel=0.05) and p2 == pytest.approx(2.1, rel=0.05)


def test_dual_norms_shape2_a200(dual_table):
    assert _row(dual_table, 2, 200.0)[2] == pytest.approx(2.7e3, rel=0.05)


def test_dual_norms_shape1_psi2_bounded(dual_table):
    assert _row(dual_table, 1, 2000.0)[3] / _row(dual_table, 1, 2.0)[3] <= 1.1


def test_dual_norms_shape1_growth_ratios(dual_table):
    published = np.array([3.9, 8.9e1, 9.4e2, 9.5e3])
    p = np.array(dual_table.where(shape=1).column("psi1"))
    ratio = (p[1:] / p[:-1]) / (published[1:] / published[:-1])
    assert np.all(np.abs(ratio - 1) <= 0.2)


def test_zero_forcing_wave_gives_zero_errors():
    cfg = config_from_dict(small_wave(source={"f": 0.0, "B": 1.0}, interface={"A": 2.0, "B": 0.1, "f": [0.0]}))
    t = run_wave(cfg)
    for c in ("error_t0.05", "error_t0.1"):
        assert t.column(c) == [0.0, 0.0]


def test_wave_errors_decrease():
    t = run_wave(config_from_dict(small_wave()))
    e = t.column("error_t0.1")
    assert e[1] < e[0] and math.isnan(t.column("eoc_t0.1")[0])


def test_mesh_info_table():
    t = run_mesh_info(load_config(CONFIGS / "patch_study.json"))
    assert t.columns[:3] == ["mesh", "nodes", "triangles"]
    fine = t.where(mesh="fine128").rows
    assert fine and fine[0][1] == 129 ** 2 and fine[0][-1] == 1
    with pytest.raises(ConfigError):
        run_mesh_info(load_config(CONFIGS / "dual_norms.json"))


# ---------------------------------------------------------------- command line

def test_cli_dual_norms(tmp_path):
    assert cli.main(["dual-norms", "--config", str(CONFIGS / "dual_norms.json"), "--out", str(tmp_path), "-q"]) == 0
    assert (tmp_path / "dual_norms.csv").is_file() and (tmp_path / "dual_norms.svg").is_file()
    assert len(read_csv(tmp_path / "dual_norms.csv")) == 8


def test_cli_config_error(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", small_wave(k=[0]))
    assert cli.main(["wave", "--config", str(bad), "--out", str(tmp_path / "o"), "-q"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_kind_mismatch(tmp_path):
    assert cli.main(["decay", "--config", str(CONFIGS / "wave.json"), "--out", str(tmp_path), "-q"]) == 2


def test_cli_bad_workers(tmp_path):
    cfg = write_json(tmp_path / "w.json", small_wave())
    assert cli.main(["wave", "--config", str(cfg), "--out", str(tmp_path), "--workers", "0", "-q"]) == 2


def test_cli_numerical_failure(tmp_path, monkeypatch, capsys):
    def boom(cfg, export_dir=None):
        raise SingularPatchError("singular patch (T=0, k=1)")
    monkeypatch.setattr(cli, "run_experiment", boom)
    cfg = write_json(tmp_path / "w.json", small_wave())
    assert cli.main(["wave", "--config", str(cfg), "--out", str(tmp_path), "-q"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_mesh_info(tmp_path):
    assert cli.main(["mesh-info", "--config", str(CONFIGS / "decay.json"), "--out", str(tmp_path), "-q"]) == 0
    t = read_csv(tmp_path / "decay_mesh_info.csv")
    assert t.column("mesh") == ["coarse16", "fine64"]


def test_cli_export(tmp_path):
    cfg = write_json(tmp_path / "w.json", small_wave())
    assert cli.main(["wave", "--config", str(cfg), "--out", str(tmp_path / "o"), "--export", "--no-plot", "-q"]) == 0
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert names == ["w.csv", "w_lod2_t0.05.csv", "w_lod2_t0.1.csv", "w_lod4_t0.05.csv", "w_lod4_t0.1.csv",
                     "w_reference_t0.05.csv", "w_reference_t0.1.csv"]
    assert len(read_csv(tmp_path / "o" / "w_reference_t0.1.csv")) == 17 ** 2


def test_cli_decay_export_scaled(tmp_path):
    out = tmp_path / "d"
    assert cli.main(["decay", "--config", str(CONFIGS / "decay.json"), "--out", str(out), "--scale", "0.5",
                     "--export", "-q"]) == 0
    t = read_csv(out / "decay.csv")
    assert t.where(variant="fracture-aware", layer=0.0).rows[0][2] > 0
    for v in ("fracture-aware", "element-based"):
        c = read_csv(out / f"decay_corrector_{v}.csv")
        assert c.columns == ["node", "dof", "value"] and len(c) > 0
        assert len(set(c.column("node"))) == 1


def test_cli_deterministic(tmp_path):
    cfg = write_json(tmp_path / "w.json", small_wave())
    for d in ("a", "b"):
        assert cli.main(["wave", "--config", str(cfg), "--out", str(tmp_path / d), "--export", "-q"]) == 0
    for name in ("w.csv", "w_lod4_t0.1.csv", "w.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_requires_arguments():
    with pytest.raises(SystemExit) as exc:
        cli.main(["wave"])
    assert exc.value.code == 2
