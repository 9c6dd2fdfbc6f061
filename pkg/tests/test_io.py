import json

import numpy as np
import pytest

from bwbary import (
    LocationScaleMeasure,
    MatrixBundle,
    ParseError,
    PsdMatrix,
    ValidationError,
    bw_distance_sq,
    load_bundle,
    load_report,
    run_clt_experiment,
    save_bundle,
    save_report,
    scale_location_barycenter,
    w2_distance_sq,
    write_report_csv,
)
from bwbary.mclab import ExperimentConfig

from helpers import rand_spd


def random_bundle(rng, d=3, n=4, complex_mode=False, weighted=False):
    mats = [PsdMatrix(rand_spd(rng, d, complex_mode=complex_mode)) for _ in range(n)]
    weights = None
    if weighted:
        raw = rng.uniform(0.5, 1.5, n)
        weights = raw / raw.sum()
        correction = 1.0 - weights.sum()
        weights[-1] += correction
    return MatrixBundle(mats, weights=weights, mode="complex" if complex_mode else "real")


class TestBundleRoundTrip:
    def test_single_identity(self, tmp_path):
        path = tmp_path / "one.mat"
        save_bundle(MatrixBundle([PsdMatrix(np.eye(2))]), path)
        loaded = load_bundle(path)
        assert len(loaded) == 1
        assert np.array_equal(loaded.matrices[0].array, np.eye(2))

    @pytest.mark.parametrize("binary", [False, True])
    @pytest.mark.parametrize("complex_mode", [False, True])
    def test_bit_exact_round_trip(self, tmp_path, binary, complex_mode):
        rng = np.random.default_rng(0)
        bundle = random_bundle(rng, complex_mode=complex_mode, weighted=True)
        path = tmp_path / "b.mat"
        save_bundle(bundle, path, binary=binary)
        loaded = load_bundle(path)
        assert loaded.mode == bundle.mode
        assert np.array_equal(loaded.weights, bundle.weights)
        for a, b in zip(loaded.matrices, bundle.matrices):
            assert np.array_equal(a.array, b.array)

    def test_save_load_save_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        bundle = random_bundle(rng)
        p1, p2 = tmp_path / "a.mat", tmp_path / "b.mat"
        save_bundle(bundle, p1)
        save_bundle(load_bundle(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestBundleValidation:
    def test_asymmetric_matrix_names_index(self, tmp_path):
        path = tmp_path / "bad.mat"
        path.write_text(
            "BWB v1 2 real 2\n"
            "1.0 0.0\n0.0 1.0\n"
            "1.0 0.5\n0.0 1.0\n"
        )
        with pytest.raises(ValidationError, match="matrix 1"):
            load_bundle(path)

    def test_weights_error_carries_sum(self, tmp_path):
        path = tmp_path / "w.mat"
        path.write_text(
            "BWB v1 2 real 2\n"
            "weights: 0.5 0.6\n"
            "1.0 0.0\n0.0 1.0\n"
            "1.0 0.0\n0.0 1.0\n"
        )
        with pytest.raises(ValidationError, match="1.1"):
            load_bundle(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "h.mat"
        path.write_text("BWX v9 2 real 1\n1.0 0.0\n0.0 1.0\n")
        with pytest.raises(ParseError):
            load_bundle(path)

    def test_truncated_payload_mentions_line(self, tmp_path):
        path = tmp_path / "t.mat"
        path.write_text("BWB v1 2 real 2\n1.0 0.0\n0.0 1.0\n1.0 0.0\n")
        with pytest.raises(ParseError, match="matrix 1"):
            load_bundle(path)

    def test_bad_entry_line_number(self, tmp_path):
        path = tmp_path / "e.mat"
        path.write_text("BWB v1 2 real 1\n1.0 zzz\n0.0 1.0\n")
        with pytest.raises(ParseError, match=":2"):
            load_bundle(path)

    def test_complex_entries_parse(self, tmp_path):
        path = tmp_path / "c.mat"
        path.write_text(
            "BWB v1 2 complex 1\n"
            "2.0+0.0i 0.0+1.0i\n"
            "0.0-1.0i 2.0+0.0i\n"
        )
        loaded = load_bundle(path)
        assert loaded.matrices[0].array[0, 1] == 1j

    def test_exponent_complex_round_trip(self, tmp_path):
        mat = np.array([[2.0, 1e-5 + 2e-7j], [1e-5 - 2e-7j, 3.0]])
        bundle = MatrixBundle([PsdMatrix(mat)], mode="complex")
        path = tmp_path / "exp.mat"
        save_bundle(bundle, path)
        assert np.array_equal(load_bundle(path).matrices[0].array, bundle.matrices[0].array)

    def test_binary_truncation_detected(self, tmp_path):
        rng = np.random.default_rng(2)
        path = tmp_path / "bin.mat"
        save_bundle(random_bundle(rng), path, binary=True)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ParseError, match="truncated"):
            load_bundle(path)


class TestScaleLocation:
    def test_w2_identical_measures(self):
        rng = np.random.default_rng(3)
        m = LocationScaleMeasure(rng.standard_normal(3), rand_spd(rng, 3))
        assert w2_distance_sq(m, m) == pytest.approx(0.0, abs=1e-12)

    def test_w2_scalar_example(self):
        a = LocationScaleMeasure([0.0], np.array([[1.0]]))
        b = LocationScaleMeasure([3.0], np.array([[4.0]]))
        assert w2_distance_sq(a, b) == pytest.approx(9.0 + 1.0)

    def test_w2_zero_means_reduces_to_bw(self):
        rng = np.random.default_rng(4)
        s1, s2 = rand_spd(rng, 3), rand_spd(rng, 3)
        a = LocationScaleMeasure(np.zeros(3), s1)
        b = LocationScaleMeasure(np.zeros(3), s2)
        assert w2_distance_sq(a, b) == bw_distance_sq(s1, s2)

    def test_barycenter_identical_measures(self):
        rng = np.random.default_rng(5)
        m = LocationScaleMeasure(rng.standard_normal(2), rand_spd(rng, 2))
        out = scale_location_barycenter([m, m, m])
        assert np.allclose(out.mean, m.mean)
        assert np.allclose(out.covariance.array, m.covariance.array, atol=1e-9)

    def test_barycenter_commuting_example(self):
        measures = [
            LocationScaleMeasure([0.0, 0.0], np.diag([1.0, 4.0])),
            LocationScaleMeasure([2.0, 2.0], np.diag([9.0, 16.0])),
        ]
        out = scale_location_barycenter(measures)
        assert np.allclose(out.mean, [1.0, 1.0])
        assert np.allclose(out.covariance.array, np.diag([4.0, 9.0]), atol=1e-10)

    def test_single_measure(self):
        rng = np.random.default_rng(6)
        m = LocationScaleMeasure(rng.standard_normal(2), rand_spd(rng, 2))
        out = scale_location_barycenter([m])
        assert np.array_equal(out.mean, m.mean)
        assert np.array_equal(out.covariance.array, m.covariance.array)


class TestReports:
    def test_save_validates_and_round_trips(self, tmp_path):
        cfg = ExperimentConfig(d=2, n_grid=(3,), replicates=3, pop_proxy_size=60,
                               limit_draws=50, seed=2)
        report = run_clt_experiment(cfg)
        path = tmp_path / "r.json"
        save_report(report, path)
        loaded = load_report(path)
        assert loaded == report.to_dict()

    def test_schema_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"schema": "report_schema_v1", "kind": "clt"}))
        with pytest.raises(ValidationError):
            load_report(path)

    def test_invalid_json_is_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_report(path)

    def test_csv_emission(self, tmp_path):
        cfg = ExperimentConfig(d=2, n_grid=(3, 4), replicates=3, pop_proxy_size=60,
                               limit_draws=50, seed=2)
        report = run_clt_experiment(cfg)
        files = write_report_csv(report, tmp_path / "csv")
        assert len(files) == 6
        sample = (tmp_path / "csv" / "dbw_n3.csv").read_text().strip().splitlines()
        assert sample[0] == "replicate,value"
        assert len(sample) == 1 + 3
        values = [float(line.split(",")[1]) for line in sample[1:]]
        report_values = [r["dbw"] for r in report.per_n[0]["replicates"]]
        assert values == report_values
