import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from fixangle import cli
from fixangle.config import EPS_REFERENCE, GridSpec, apply_overrides, load_config, validate_config
from fixangle.errors import ConfigError, NumericalError
from fixangle.io import inventory, read_json, read_table, verify_inventory, write_json, write_table
from fixangle.pipeline import run_sweep

BASE = {
    "schema": "fixangle-experiment/1",
    "kind": "forward",
    "metric": {"family": "product", "amplitude": 0.1, "center": [0.1, 0.1], "radius": 0.8},
    "potentials": [{"family": "gaussian", "amplitude": 1.0, "center": [0.1, 0.05], "width": 0.3}],
    "grid": {"resolutions": [17]},
}


def with_(**kw):
    raw = json.loads(json.dumps(BASE))
    for k, v in kw.items():
        node, *rest = k.split("__")
        if rest:
            raw.setdefault(node, {})[rest[0]] = v
        else:
            raw[node] = v
    return raw


def dump(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


class TestValidation:
    def test_valid(self):
        cfg = validate_config(with_())
        assert cfg.kind == "forward" and cfg.grid.resolutions == [17]
        assert cfg.build_metric().name == "product"

    @pytest.mark.parametrize("raw, path", [
        (with_(schema="other/1"), "schema"),
        (with_(kind="bake"), "kind"),
        (with_(metric={"family": "torus"}), "metric.family"),
        (with_(potentials=[{"family": "nope"}]), "potentials[0].family"),
        (with_(potentials=[{"family": "zero"}] * 3), "potentials"),
        (with_(grid__resolutions=[16]), "grid.resolutions[0]"),
        (with_(grid__resolutions=[33, 17]), "grid.resolutions"),
        (with_(grid__eps_policy="cubic"), "grid.eps_policy"),
        (with_(grid__T=-1.0), "grid.T"),
        (with_(grid__bogus=1), "grid"),
        (with_(carleman={"iota": 0.0}), "carleman.iota"),
        (with_(carleman={"lam": 0.5}), "carleman.lam"),
        (with_(carleman={"t_rule": "x"}), "carleman.t_rule"),
        (with_(stability={"sigma": 0.0}), "stability.sigma"),
        (with_(seed=-1), "seed"),
        (with_(dimension=3), "dimension"),
        (with_(extra=1), "<root>"),
    ])
    def test_errors_name_field(self, raw, path):
        with pytest.raises(ConfigError) as ei:
            validate_config(raw)
        assert ei.value.path == path
        assert ei.value.exit_code == 1

    def test_parameter_error_surfaces_early(self):
        with pytest.raises(ConfigError):
            validate_config(with_(potentials=[{"family": "bump", "center": [0.9, 0.0], "radius": 0.5}]))

    def test_random_potential_seeded(self):
        raw = with_(potentials=[{"family": "random"}], seed=7)
        x = np.array([[0.1, 0.2], [-0.3, 0.0]])
        a = validate_config(raw).build_potentials()[0](x)
        b = validate_config(raw).build_potentials()[0](x)
        c = validate_config({**raw, "seed": 8}).build_potentials()[0](x)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_bad_yaml(self, tmp_path):
        p = tmp_path / "x.yaml"
        p.write_text("kind: [unclosed")
        with pytest.raises(ConfigError):
            load_config(p)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")


class TestEps:
    def test_fixed(self):
        g = GridSpec(eps_factor=6.0)
        assert g.eps_for(129) == pytest.approx(6 * 2 / 128)
        assert g.eps_for(257) == pytest.approx(6 * 2 / 256)

    def test_sqrt_policy(self):
        g = GridSpec(eps_factor=6.0, eps_policy="sqrt")
        assert g.eps_for(EPS_REFERENCE) == pytest.approx(GridSpec().eps_for(EPS_REFERENCE))
        # ε/Δx grows like Δx^{-1/2}: 6√2 at 257, 12 at 513
        assert g.eps_for(257) / (2 / 256) == pytest.approx(6 * np.sqrt(2))
        assert g.eps_for(513) / (2 / 512) == pytest.approx(12.0)

    def test_explicit_eps_wins(self):
        assert GridSpec(eps=0.05, eps_policy="sqrt").eps_for(513) == 0.05


class TestOverrides:
    def test_apply(self):
        out = apply_overrides(BASE, {"resolution": [33, 65], "seed": 3, "output": "z"})
        assert out["grid"]["resolutions"] == [33, 65] and out["seed"] == 3 and out["output"] == "z"
        assert BASE["grid"]["resolutions"] == [17]

    def test_load_with_overrides(self, tmp_path):
        cfg = load_config(dump(tmp_path, BASE), {"resolution": [33]})
        assert cfg.grid.resolutions == [33]


class TestIO:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=30))
    def test_table_roundtrip(self, tmp_path_factory, vals):
        p = tmp_path_factory.mktemp("t") / "t.csv"
        a = np.array(vals)
        write_table(p, {"a": a, "b": 2 * a}, {"note": {"k": [1, 2]}})
        meta, cols = read_table(p)
        assert np.array_equal(cols["a"], a) and np.array_equal(cols["b"], 2 * a)
        assert meta["note"] == {"k": [1, 2]}
        assert np.array_equal(cols["index"], np.arange(len(a)))

    def test_ragged_columns(self, tmp_path):
        with pytest.raises(ConfigError):
            write_table(tmp_path / "t.csv", {"a": [1, 2], "b": [1]})

    def test_json_numpy(self, tmp_path):
        p = write_json(tmp_path / "x.json", {"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True)})
        assert read_json(p) == {"a": 1.5, "b": [0, 1, 2], "c": True}

    def test_tamper_detection(self, tmp_path):
        f1 = write_table(tmp_path / "a.csv", {"x": [1.0, 2.0]})
        f2 = write_json(tmp_path / "b.json", {"y": 1})
        man = {"outputs": inventory([f1, f2], tmp_path)}
        assert verify_inventory(man, tmp_path) == []
        f1.write_text(f1.read_text().replace("2", "3"))
        f2.unlink()
        assert verify_inventory(man, tmp_path) == ["a.csv", "b.json"]


class TestCLI:
    def test_list_families(self, capsys):
        assert cli.main(["--list-families"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert {"euclidean", "product", "warped_product"} <= set(out["metric"])
        assert "random" in out["potential"]

    def test_no_command(self):
        assert cli.main([]) == 1

    def test_validate_only(self, tmp_path, capsys):
        assert cli.main(["run", str(dump(tmp_path, BASE)), "--validate-only", "--seed", "4"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["valid"] and out["config"]["seed"] == 4

    def test_config_error_code(self, tmp_path, capsys):
        assert cli.main(["run", str(dump(tmp_path, with_(kind="bake"))), "--validate-only"]) == 1
        assert "ConfigError" in capsys.readouterr().err

    def test_certificate_error_code(self, tmp_path):
        raw = with_(kind="certify", metric={"family": "conformal", "amplitude": 5.0, "radius": 0.5},
                    output=str(tmp_path / "o"))
        assert cli.main(["run", str(dump(tmp_path, raw))]) == 2

    def test_numerical_error_code(self, tmp_path, monkeypatch):
        import fixangle.pipeline as pl

        def boom(cfg):
            raise NumericalError("solver blew up", "wavesolver")

        monkeypatch.setattr(pl, "run_experiment", boom)
        assert cli.main(["run", str(dump(tmp_path, BASE))]) == 3

    def test_single_resolution_sweep(self, tmp_path):
        assert cli.main(["sweep", str(dump(tmp_path, BASE)), "--output", str(tmp_path / "s")]) == 1


@pytest.fixture(scope="module")
def forward_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = dump(root, BASE)
    for name in ("a", "b"):
        assert cli.main(["run", str(cfg), "--output", str(root / name)]) == 0
    return root


class TestRun:
    def test_manifest(self, forward_runs):
        man = read_json(forward_runs / "a" / "manifest.json")
        assert man["status"] == "ok" and man["schema"] == "fixangle-manifest/1"
        assert {o["path"] for o in man["outputs"]} >= {"chart.csv", "wavefront.csv", "trace.csv", "extracted.csv"}
        assert verify_inventory(man, forward_runs / "a") == []

    def test_deterministic(self, forward_runs):
        a = read_json(forward_runs / "a" / "manifest.json")
        b = read_json(forward_runs / "b" / "manifest.json")
        sa = {o["path"]: o["sha256"] for o in a["outputs"]}
        sb = {o["path"]: o["sha256"] for o in b["outputs"]}
        # solver.json carries a wall-clock runtime; every data file must match byte for byte
        for k in sa:
            if k != "solver.json":
                assert sa[k] == sb[k], k
        ja, jb = read_json(forward_runs / "a" / "solver.json"), read_json(forward_runs / "b" / "solver.json")
        ja.pop("runtime_s"), jb.pop("runtime_s")
        assert ja == jb

    def test_certify_run(self, tmp_path):
        raw = with_(kind="certify", metric={"family": "euclidean"}, carleman={"n_samples": 4096})
        cfg = validate_config(raw)
        from fixangle.pipeline import run_experiment
        man = run_experiment(cfg, tmp_path / "c")
        assert man["status"] == "ok"
        assert set(man["certificates"]) >= {"chart", "level_separation", "pseudoconvexity", "h"}
        meta, cols = read_table(tmp_path / "c" / "h_sigma.csv")
        assert np.all(np.diff(cols["log_h"]) < 0)

    def test_sweep(self, tmp_path):
        cfg = validate_config(with_(grid__resolutions=[17, 33], metric={"family": "euclidean"}))
        man = run_sweep(cfg, tmp_path / "s")
        rows = man["summary"]["sweep"]
        assert rows["resolution"] == [17, 33]
        assert all(e < 1e-6 for e in rows["roundtrip_error"])
