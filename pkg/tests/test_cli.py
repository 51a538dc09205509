import json

import pytest

from vsdeval.cli import DEFAULT_VISIB_BINS, RunConfig, build_parser, cmd_eval, cmd_sweep, cmd_validate, main
from vsdeval.dataset import load_estimates, save_estimates
from vsdeval.fixtures import perturbed

OUTPUTS = ("ledger.csv", "report.json", "per_object.csv", "visibility.csv")


def eval_args(root, out, *extra):
    return ["eval", "--dataset", str(root), "--estimates", str(root / "estimates"), "--out", str(out), *extra]


def test_eval_exact_gt(fixture_root, tmp_path, capsys):
    assert main(eval_args(fixture_root, tmp_path / "out")) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["overall"] == 1.0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == sorted(OUTPUTS)
    assert "overall recall 1.0000" in capsys.readouterr().out


def test_missing_estimates_names_path(fixture_root, tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    rc = main(["eval", "--dataset", str(fixture_root / "fixa"), "--estimates", str(missing), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_theta_zero_is_a_validation_failure(fixture_root, tmp_path, capsys):
    assert main(eval_args(fixture_root, tmp_path / "o", "--theta", "0")) == 2
    assert "theta" in capsys.readouterr().err
    assert main(eval_args(fixture_root, tmp_path / "o", "--tau", "-1")) == 2
    assert main(eval_args(fixture_root, tmp_path / "o", "--delta", "-1")) == 2
    assert main(eval_args(fixture_root, tmp_path / "o", "--workers", "0")) == 2


def test_single_file_needs_single_dataset(fixture_root, tmp_path):
    args = ["eval", "--dataset", str(fixture_root), "--estimates", str(fixture_root / "estimates" / "fixa.csv")]
    assert main(args + ["--out", str(tmp_path / "o")]) == 2
    args = ["eval", "--dataset", str(fixture_root / "fixa"), "--estimates", str(fixture_root / "estimates" / "fixa.csv")]
    assert main(args + ["--out", str(tmp_path / "o")]) == 0


def test_parse_error_exit_code(fixture_root, tmp_path, capsys):
    bad = tmp_path / "est"
    bad.mkdir()
    lines = (fixture_root / "estimates" / "fixa.csv").read_text().splitlines()
    lines[3] = "1,0,1,0.5,1 0 0,0 0 1,0"
    (bad / "fixa.csv").write_text("\n".join(lines) + "\n")
    rc = main(["eval", "--dataset", str(fixture_root), "--estimates", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err
    assert str(bad / "fixa.csv") in err and "line 4" in err


def test_missing_dataset_file_means_no_estimates(fixture_root, tmp_path):
    est = tmp_path / "est"
    est.mkdir()
    (est / "fixa.csv").write_text((fixture_root / "estimates" / "fixa.csv").read_text())
    assert main(["eval", "--dataset", str(fixture_root), "--estimates", str(est), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["datasets"]["fixa"]["recall"] == 1.0
    assert report["datasets"]["fixb"]["recall"] == 0.0
    assert report["datasets"]["fixb"]["no_estimate"] == 3
    assert report["overall"] == 0.5


def test_targets_option(fixture_root, tmp_path):
    targets = tmp_path / "t.csv"
    targets.write_text("scene_id,im_id,obj_id\n2,0,1\n")
    rc = main(
        ["eval", "--dataset", str(fixture_root / "fixa"), "--estimates", str(fixture_root / "estimates" / "fixa.csv"),
         "--targets", str(targets), "--out", str(tmp_path / "o")]
    )  # fmt: skip
    assert rc == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["datasets"]["fixa"]["total"] == 1


def test_identical_invocations_identical_bytes(fixture_root, tmp_path):
    for k in range(2):
        assert main(eval_args(fixture_root, tmp_path / f"o{k}")) == 0
    for name in OUTPUTS:
        assert (tmp_path / "o0" / name).read_bytes() == (tmp_path / "o1" / name).read_bytes()


def test_sweep_grid_matches_independent_evals(fixture_root, tmp_path):
    est = tmp_path / "est"
    est.mkdir()
    for name in ("fixa", "fixb"):
        recs = load_estimates(fixture_root / "estimates" / f"{name}.csv")
        save_estimates(perturbed(recs, offset=(4.0, 0.0, 12.0), angle_deg=6.0, axis=(1, 0, 0)), est / f"{name}.csv")
    taus, thetas = [5.0, 20.0, 60.0], [0.1, 0.3, 0.6]
    cfg = RunConfig(fixture_root, est, tmp_path / "sw")
    assert cmd_sweep(cfg, taus, thetas) == 0
    rows = [line.split(",") for line in (tmp_path / "sw" / "sweep.csv").read_text().splitlines()[1:]]
    assert len(rows) == 9
    for tau_s, theta_s, overall, *_ in rows:
        out = tmp_path / f"e_{tau_s}_{theta_s}"
        assert cmd_eval(RunConfig(fixture_root, est, out, tau=float(tau_s), theta=float(theta_s))) == 0
        assert json.loads((out / "report.json").read_text())["overall"] == float(overall)


def test_sweep_rejects_bad_lists(fixture_root, tmp_path):
    cfg = RunConfig(fixture_root, fixture_root / "estimates", tmp_path / "sw")
    assert cmd_sweep(cfg, [], [0.3]) == 2
    assert cmd_sweep(cfg, [20.0], [0.0]) == 2
    assert not (tmp_path / "sw").exists()


def test_validate(fixture_copy, capsys):
    assert cmd_validate(fixture_copy) == 0
    sdir = fixture_copy / "fixa" / "test" / "000001"
    gts = json.loads((sdir / "scene_gt.json").read_text())
    gts["1"][2]["obj_id"] = 9
    gts["0"][4]["R"] = [1, 0, 0, 0, 1, 0, 0, 0.2, 1]
    (sdir / "scene_gt.json").write_text(json.dumps(gts))
    assert main(["validate", "--dataset", str(fixture_copy)]) == 2
    err = capsys.readouterr().err
    assert "object 9 has no model" in err
    assert "scene 1 image 0 row 4" in err
    assert cmd_validate(fixture_copy / "missing") == 1


def test_help_echoes_defaults_and_units(capsys):
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["eval", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    for needle in ("in mm (default: 20.0)", "(default: 0.3)", "in mm (default: 15.0)", "VSDEVAL_DATASET_ROOT"):
        assert needle in text


def test_dataset_from_environment(fixture_root, tmp_path, monkeypatch):
    monkeypatch.setenv("VSDEVAL_DATASET_ROOT", str(fixture_root))
    out = tmp_path / "o"
    assert main(["eval", "--estimates", str(fixture_root / "estimates"), "--out", str(out)]) == 0
    monkeypatch.delenv("VSDEVAL_DATASET_ROOT")
    assert main(["eval", "--estimates", str(fixture_root / "estimates"), "--out", str(out)]) == 2


def test_interrupt_leaves_no_outputs(fixture_root, tmp_path, monkeypatch):
    import vsdeval.cli as cli

    def boom(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "recall_by_visible_fraction", boom)
    out = tmp_path / "o"
    assert cli.cmd_eval(RunConfig(fixture_root, fixture_root / "estimates", out), DEFAULT_VISIB_BINS) == 130
    assert not out.exists() or not any(out.iterdir())


def test_fixturegen(tmp_path, capsys):
    assert main(["fixturegen", "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "fixa" / "dataset.json").is_file()
    assert (tmp_path / "g" / "estimates" / "fixb.csv").is_file()
