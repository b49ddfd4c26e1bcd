import json

import numpy as np
import pytest

from rplattice import build_lattice, phi4, potential_to_obj
from rplattice.cli import main, read_matrix_csv, write_matrix_csv


def write_config(path, obj):
    path.write_text(json.dumps(obj, indent=2), encoding="utf-8")
    return str(path)


def load_report(path):
    return json.loads(path.read_text(encoding="utf-8"))


def report_bytes_without_wall_time(path):
    obj = load_report(path)
    obj.pop("wall_time_s")
    return json.dumps(obj, indent=2, sort_keys=True)


def free_field_config(n_samples=20_000, seed=1):
    return {
        "lattice": {"time_extent": 2, "spatial_extents": [4]},
        "covariance": {"kind": "free_field", "mass": 1.0},
        "mc": {"n_samples": n_samples, "seed": seed},
    }


def phi4_density_obj():
    lat = build_lattice(2, [4])
    return potential_to_obj(lat, phi4(lat, 0.1))


def test_check_gaussian_free_field_passes(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", free_field_config())
    out = tmp_path / "report.json"
    code = main(["check-gaussian", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 0
    report = load_report(out)
    assert report["verdict"] == "pass"
    assert report["checks"]["theta_invariance"]["passed"]
    assert report["checks"]["gaussian_rp"]["passed"]
    assert report["checks"]["pq_decomposition"]["sum_exact"]
    assert report["checks"]["convolution_identity"]["passed"]
    assert report["config"]["mc"]["n_samples"] == 20_000


def test_check_gaussian_writes_matrix_csvs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", free_field_config(n_samples=5_000))
    csv_dir = tmp_path / "csvs"
    code = main(["check-gaussian", "--config", cfg, "--csv-dir", str(csv_dir), "--quiet"])
    assert code == 0
    cov = read_matrix_csv(csv_dir / "covariance.csv")
    block = read_matrix_csv(csv_dir / "cross_block.csv")
    assert cov.shape == (16, 16)
    assert block.shape == (8, 8)


def test_check_gaussian_flags_non_rp_covariance(tmp_path):
    write_matrix_csv(tmp_path / "cov.csv", np.array([[1.0, -0.5], [-0.5, 1.0]]))
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "covariance": {"kind": "explicit", "matrix_file": "cov.csv"},
            "mc": {"n_samples": 5_000, "seed": 2},
        },
    )
    out = tmp_path / "report.json"
    code = main(["check-gaussian", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 1
    report = load_report(out)
    assert report["verdict"] == "fail"
    assert report["checks"]["gaussian_rp"]["min_eigenvalue"] == pytest.approx(-0.5, abs=1e-12)
    assert "gaussian-rp" in report["failure_reasons"]


def test_malformed_config_exits_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["check-gaussian", "--config", str(bad), "--quiet"]) == 2
    assert main(["check-gaussian", "--config", str(tmp_path / "missing.json"), "--quiet"]) == 2
    cfg = write_config(tmp_path / "nolattice.json", {"covariance": {"kind": "free_field", "mass": 1.0}})
    assert main(["check-gaussian", "--config", cfg, "--quiet"]) == 2


def test_explicit_matrix_shape_mismatch_exits_two(tmp_path):
    write_matrix_csv(tmp_path / "cov.csv", np.eye(3))
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "covariance": {"kind": "explicit", "matrix_file": "cov.csv"},
        },
    )
    assert main(["check-gaussian", "--config", cfg, "--quiet"]) == 2


def test_explicit_test_functions_must_have_positive_support(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "covariance": {"kind": "free_field", "mass": 1.0},
            "density": {"terms": [], "constant": 0},
            "test_functions": {"kind": "explicit", "vectors": [[1.0, 0.0]]},
            "mc": {"n_samples": 1000, "seed": 0},
        },
    )
    assert main(["verify-rp", "--config", cfg, "--quiet"]) == 2


def test_check_density_phi4_emits_witness(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 2, "spatial_extents": [4]},
            "density": phi4_density_obj(),
        },
    )
    out = tmp_path / "report.json"
    code = main(["check-density", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 0
    report = load_report(out)
    witness = report["checks"]["split"]["witness"]
    assert witness is not None
    assert len(witness["terms"]) == 8
    assert all(t["coefficient"] == -0.1 for t in witness["terms"])
    assert all(t["factors"][0]["site"][0] >= 1 for t in witness["terms"])


def test_check_density_rejects_cross_plane_coupling(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "density": {
                "terms": [
                    {
                        "coefficient": 0.7,
                        "factors": [
                            {"site": [-1], "power": 1},
                            {"site": [1], "power": 1},
                        ],
                    }
                ],
                "constant": 0,
            },
        },
    )
    out = tmp_path / "report.json"
    code = main(["check-density", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 1
    report = load_report(out)
    assert report["failure_reasons"] == ["split:mixed-support"]


def test_check_density_rejects_one_sided_quartic(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "density": {
                "terms": [{"coefficient": -1, "factors": [{"site": [1], "power": 4}]}],
                "constant": 0,
            },
        },
    )
    code = main(["check-density", "--config", cfg, "--quiet"])
    assert code == 1


def test_verify_rp_full_pipeline_passes(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 2, "spatial_extents": [4]},
            "covariance": {"kind": "free_field", "mass": 1.0},
            "density": phi4_density_obj(),
            "test_functions": {"kind": "random", "count": 2, "seed": 6},
            "mc": {"n_samples": 20_000, "seed": 1, "n_outer": 1_000, "n_inner": 200},
        },
    )
    out = tmp_path / "report.json"
    code = main(["verify-rp", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 0
    report = load_report(out)
    checks = report["checks"]
    assert checks["gram_direct"]["verdict"] in ("pass", "inconclusive")
    assert checks["gram_factorized"]["min_eigenvalue"] >= -1e-10
    assert checks["structural_psd"]["passed"]
    assert checks["estimator_agreement"]["passed"]


def test_verify_rp_stops_at_split_gate(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "covariance": {"kind": "free_field", "mass": 1.0},
            "density": {
                "terms": [
                    {
                        "coefficient": 0.3,
                        "factors": [
                            {"site": [-1], "power": 1},
                            {"site": [1], "power": 1},
                        ],
                    }
                ],
                "constant": 0,
            },
            "mc": {"n_samples": 100_000, "seed": 0},
        },
    )
    out = tmp_path / "report.json"
    code = main(["verify-rp", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 1
    report = load_report(out)
    assert report["failure_reasons"] == ["split:mixed-support"]
    # the gate ordering spares the Monte Carlo budget
    assert "gram_direct" not in report["checks"]


def test_verify_rp_stops_at_gaussian_gate(tmp_path):
    write_matrix_csv(tmp_path / "cov.csv", np.array([[1.0, -0.5], [-0.5, 1.0]]))
    cfg = write_config(
        tmp_path / "cfg.json",
        {
            "lattice": {"time_extent": 1, "spatial_extents": []},
            "covariance": {"kind": "explicit", "matrix_file": "cov.csv"},
            "density": {"terms": [], "constant": 0},
            "mc": {"n_samples": 100_000, "seed": 0},
        },
    )
    out = tmp_path / "report.json"
    code = main(["verify-rp", "--config", cfg, "--out", str(out), "--quiet"])
    assert code == 1
    report = load_report(out)
    assert report["failure_reasons"] == ["gaussian-gate"]
    assert "split" not in report["checks"]


def test_reports_are_byte_identical_modulo_wall_time(tmp_path):
    cfg_obj = {
        "lattice": {"time_extent": 1, "spatial_extents": []},
        "covariance": {"kind": "free_field", "mass": 1.0},
        "density": {
            "terms": [
                {"coefficient": -0.2, "factors": [{"site": [-1], "power": 4}]},
                {"coefficient": -0.2, "factors": [{"site": [1], "power": 4}]},
            ],
            "constant": 0,
        },
        "test_functions": {"kind": "random", "count": 2, "seed": 3},
        "mc": {"n_samples": 10_000, "seed": 5, "n_outer": 400, "n_inner": 100},
    }
    cfg = write_config(tmp_path / "cfg.json", cfg_obj)
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["verify-rp", "--config", cfg, "--out", str(out_a), "--quiet"]) == 0
    assert main(["verify-rp", "--config", cfg, "--out", str(out_b), "--quiet"]) == 0
    assert report_bytes_without_wall_time(out_a) == report_bytes_without_wall_time(out_b)


def test_seed_override_is_echoed(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", free_field_config(n_samples=2_000, seed=1))
    out = tmp_path / "report.json"
    assert main(["check-gaussian", "--config", cfg, "--out", str(out), "--seed", "99", "--quiet"]) == 0
    assert load_report(out)["config"]["mc"]["seed"] == 99


def test_selftest_passes_and_is_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["selftest", "--out", str(out_a), "--quiet"]) == 0
    assert main(["selftest", "--out", str(out_b), "--quiet"]) == 0
    assert report_bytes_without_wall_time(out_a) == report_bytes_without_wall_time(out_b)


def test_selftest_with_zero_tolerance_reports_failures(tmp_path):
    out = tmp_path / "report.json"
    code = main(["selftest", "--psd-tol", "0", "--out", str(out), "--quiet"])
    assert code == 1
    report = load_report(out)
    assert report["failure_reasons"]
    assert any(not e["passed"] for e in report["checks"]["selftest"])


def test_matrix_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(9)
    m = rng.standard_normal((5, 7))
    path = tmp_path / "m.csv"
    write_matrix_csv(path, m)
    assert np.array_equal(read_matrix_csv(path), m)
