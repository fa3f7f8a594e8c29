import copy

import numpy as np
import pytest
import yaml

from contactbem import cli
from contactbem.cli import (
    ConfigError,
    PRESETS,
    build_system,
    main,
    parse_scenario,
    scenario_to_dict,
)


def tiny_scenario(**solver):
    """Two stacked unit squares, pressure ramp on the layer top."""
    doc = {
        "name": "tiny",
        "chi": 1e-3,
        "contact": {"mu": 0.5, "k_g": 4e5},
        "domains": [
            {"label": "A", "allow_floating": True,
             "material": {"E": 200.0, "nu": 0.3},
             "polyline": [[0, 1], [1, 1], [1, 2], [0, 2]],
             "parts": [{"tag": "C", "n": 3}, {"tag": "N", "n": 2},
                       {"tag": "N", "n": 2}, {"tag": "N", "n": 2}]},
            {"label": "B",
             "material": {"E": 200.0, "nu": 0.3},
             "polyline": [[0, 0], [1, 0], [1, 1], [0, 1]],
             "parts": [{"tag": "D", "n": 2}, {"tag": "N", "n": 2},
                       {"tag": "C", "n": 3}, {"tag": "N", "n": 2}]},
        ],
        "loads": {
            "times": [0.0, 4e-3],
            "neumann": [{"domain": 0, "segment": 2,
                         "traction": [[0, 0], [0, -0.5]]}],
        },
        "solver": dict({"tau": 1e-3, "t_end": 4e-3}, **solver),
    }
    return doc


def test_presets_parse_and_build():
    for name, make in PRESETS.items():
        sc = parse_scenario(make())
        system = build_system(sc)
        assert system.pair.n_master_nodes > 10
        assert len(system.meshes) == 2


def test_parse_round_trips_through_yaml():
    doc = tiny_scenario()
    sc = parse_scenario(yaml.safe_dump(doc))
    again = parse_scenario(yaml.safe_dump(scenario_to_dict(sc)))
    assert again.name == sc.name
    assert again.law == sc.law
    assert again.solver.tau == sc.solver.tau
    np.testing.assert_allclose(again.neumann_loads[0]["values"],
                               sc.neumann_loads[0]["values"])


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d.pop("chi"), "missing key 'chi'"),
    (lambda d: d.update(bogus=1), "unknown keys"),
    (lambda d: d["contact"].update(mu=-0.5), "contact"),
    (lambda d: d["domains"][0]["material"].update(nu=0.7), "nu"),
    (lambda d: d["domains"][0]["parts"].pop(), "one part per"),
    (lambda d: d["loads"].update(times=[0.0, 0.0]), "strictly increasing"),
    (lambda d: d["loads"]["neumann"][0].update(segment=99), None),
    (lambda d: d["solver"].update(tau=-1.0), "tau"),
    (lambda d: d["domains"][0]["parts"][0].update(grade=["mid", 0.1]), "grade"),
])
def test_malformed_documents_rejected(mutate, match):
    doc = tiny_scenario()
    mutate(doc)
    with pytest.raises(ConfigError, match=match):
        sc = parse_scenario(yaml.safe_dump(doc))
        build_system(sc)  # segment references checked at build time


def test_unparsable_yaml_rejected():
    with pytest.raises(ConfigError, match="YAML"):
        parse_scenario("foo: [unclosed")
    with pytest.raises(ConfigError, match="mapping"):
        parse_scenario("- just\n- a list\n")


def test_neumann_load_lands_on_requested_segment():
    sc = parse_scenario(tiny_scenario())
    system = build_system(sc)
    f_end = system.loads.f_at(4e-3)
    # layer top carries -0.5 in y; everything else stays zero
    fA = f_end[0]
    assert fA.min() == -0.5
    dd = system.im.layout.domains[0]
    loaded = set()
    for e in range(system.meshes[0].n_elements):
        if np.any(fA[dd.phi_dofs_of_element(e)]):
            loaded.add(e)
    mids = [0.5 * (system.meshes[0].nodes[a] + system.meshes[0].nodes[b])
            for a, b in (system.meshes[0].elements[e] for e in loaded)]
    assert all(abs(m[1] - 2.0) < 1e-12 for m in mids)
    assert np.all(f_end[1] == 0.0)


def test_run_writes_all_artifacts(tmp_path):
    sc = parse_scenario(tiny_scenario(plot_every=2, magnification=100.0))
    records = cli.run_scenario(sc, tmp_path)
    assert len(records) == 4
    assert (tmp_path / "run_manifest.yaml").exists()
    man = yaml.safe_load((tmp_path / "run_manifest.yaml").read_text())
    assert man["scenario"]["name"] == "tiny"
    assert len(man["geometry"]) == 64
    svgs = sorted((tmp_path / "snapshots").glob("*.svg"))
    assert [p.name for p in svgs] == ["step_00002.svg", "step_00004.svg"]
    assert svgs[0].read_text().startswith("<svg")


def test_contact_csv_round_trips_bit_exact(tmp_path):
    sc = parse_scenario(tiny_scenario())
    records = cli.run_scenario(sc, tmp_path)
    lines = (tmp_path / "contact_series.csv").read_text().splitlines()
    assert lines[0].split(",") == list(cli.CONTACT_COLUMNS)
    n_c = records[0].p_n.shape[0]
    assert len(lines) == 1 + len(records) * n_c
    for rec in records:
        for i in range(n_c):
            row = lines[1 + (rec.k - 1) * n_c + i].split(",")
            assert int(row[0]) == rec.k
            assert float(row[6]) == rec.p_n[i]  # 17 sig digits: exact
            assert float(row[9]) == rec.z.z_t[i]


def test_energy_csv_consistent_with_records(tmp_path):
    sc = parse_scenario(tiny_scenario())
    records = cli.run_scenario(sc, tmp_path)
    lines = (tmp_path / "energy_log.csv").read_text().splitlines()
    assert lines[0].split(",") == list(cli.ENERGY_COLUMNS)
    assert len(lines) == 1 + len(records)
    for rec, line in zip(records, lines[1:]):
        row = line.split(",")
        assert float(row[0]) == rec.t
        assert float(row[2]) == rec.stored
        assert float(row[6]) == rec.residuum.delta


def test_reruns_are_deterministic(tmp_path):
    sc = parse_scenario(tiny_scenario())
    cli.run_scenario(sc, tmp_path / "a")
    cli.run_scenario(sc, tmp_path / "b")
    for name in ("contact_series.csv", "energy_log.csv"):
        assert ((tmp_path / "a" / name).read_text()
                == (tmp_path / "b" / name).read_text())


def test_main_export_prints_resolved_preset(capsys):
    assert main(["run", "--preset", "skewed", "--export"]) == 0
    out = capsys.readouterr().out
    doc = yaml.safe_load(out)
    assert doc["name"] == "skewed"
    assert parse_scenario(doc).solver.eps == pytest.approx(1e-3)


def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: broken\n")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    assert main(["run", "--preset", "skewed", "--eps", "1.0"]) == 2  # no --adaptive
    assert main(["run"]) == 2
    capsys.readouterr()


def test_main_runs_scenario_file(tmp_path, capsys):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_scenario()))
    code = main(["run", str(path), "--out", str(tmp_path / "out"),
                 "--tau", "2e-3"])
    assert code == 0
    assert "2 accepted steps" in capsys.readouterr().out
    assert (tmp_path / "out" / "energy_log.csv").exists()


def test_snapshot_svg_geometry(tmp_path):
    sc = parse_scenario(tiny_scenario())
    system = build_system(sc)
    zero = [np.zeros(2 * m.n_nodes) for m in system.meshes]
    path = tmp_path / "snap.svg"
    cli.emit_snapshot_svg(system.meshes, zero, 100.0, path)
    text = path.read_text()
    assert text.count("<path") == 4  # two outlines, drawn twice (coincident)
    assert "</svg>" in text
