import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayescons.densities import power, uniform
from bayescons.experiments import (
    ConfigError,
    ExperimentConfig,
    generate_data,
    read_trace_csv,
    replay_check,
    replicate_rng,
    run,
    write_result,
)
from bayescons.experiments.cli import main

UNIFORM = {"name": "uniform"}
LINEAR = {"name": "linear"}


def consistency_config(**kw):
    d = {
        "scenario": "consistency", "seed": 7, "truth": UNIFORM, "n": 300, "epsilon": 0.3,
        "prior": {"family": "discrete", "atoms": [UNIFORM, LINEAR, {"name": "power", "k": 2}], "weights": [0.5, 0.25, 0.25]},
    }
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def martingale_config(**kw):
    d = {
        "scenario": "martingale", "seed": 20261016, "truth": UNIFORM, "n": 500, "replicates": 50,
        "prior": {"family": "discrete", "atoms": [UNIFORM, LINEAR]},
        "set": {"kind": "atoms", "indices": [1]}, "transform": "log",
    }
    d.update(kw)
    return ExperimentConfig.from_dict(d)


class TestGenerateData:
    def test_deterministic(self):
        a = generate_data(uniform(), 3, replicate_rng(42, 0))
        b = generate_data(uniform(), 3, replicate_rng(42, 0))
        assert a.shape == (3,) and np.array_equal(a, b)
        assert ((a >= 0) & (a <= 1)).all()

    def test_linear_mean(self):
        x = generate_data(power(1), 100_000, replicate_rng(1, 0))
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - 2 / 3) < 3 * se

    def test_empty(self):
        assert generate_data(uniform(), 0, replicate_rng(1, 0)).size == 0

    def test_replicate_streams_do_not_depend_on_count(self):
        a = generate_data(uniform(), 5, replicate_rng(9, 3))
        _ = [replicate_rng(9, r) for r in range(10)]
        assert np.array_equal(a, generate_data(uniform(), 5, replicate_rng(9, 3)))
        assert not np.array_equal(a, generate_data(uniform(), 5, replicate_rng(9, 4)))


class TestConfig:
    def test_round_trip(self):
        cfg = consistency_config()
        assert ExperimentConfig.loads(cfg.dumps()) == cfg
        assert ExperimentConfig.loads(cfg.dumps()).dumps() == cfg.dumps()

    @given(st.integers(0, 2 ** 64 - 1), st.integers(1, 500), st.floats(0.01, 2.0))
    def test_round_trip_property(self, seed, n, eps):
        cfg = consistency_config(seed=seed, n=n, epsilon=eps)
        assert ExperimentConfig.loads(cfg.dumps()) == cfg

    @pytest.mark.parametrize("bad, field", [
        ({"replicates": 0}, "replicates"),
        ({"n": 0}, "n"),
        ({"epsilon": -1.0}, "epsilon"),
        ({"seed": -3}, "seed"),
        ({"truth": {"name": "cauchy"}}, "truth.name"),
        ({"transform": "cube"}, "transform"),
        ({"colour": "red"}, "colour"),
        ({"prior": {"family": "gaussian-process"}}, "prior.family"),
    ])
    def test_errors_name_the_field(self, bad, field):
        with pytest.raises(ConfigError) as exc:
            consistency_config(**bad)
        assert str(exc.value).startswith(field)

    def test_martingale_needs_replicates(self):
        with pytest.raises(ConfigError, match="^replicates"):
            martingale_config(replicates=10)

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="^seed"):
            ExperimentConfig.from_dict({"scenario": "summability", "prior": {"family": "discrete"}})


class TestConsistency:
    def test_truth_among_atoms(self):
        res = run(consistency_config())
        assert res.summary["final_post_mass_A"][0] < 0.01
        assert [r["n"] for r in res.rows] == list(range(301))

    def test_single_truth_atom(self):
        res = run(consistency_config(prior={"family": "discrete", "atoms": [UNIFORM]}, n=20))
        assert all(r["post_mass_A"] == 0.0 for r in res.rows)

    def test_radius_beyond_sqrt2(self):
        res = run(consistency_config(epsilon=1.5, n=20))
        assert all(r["post_mass_A"] == 0.0 for r in res.rows)

    def test_histogram_prior(self):
        cfg = ExperimentConfig.from_dict({"scenario": "predictive", "seed": 3, "truth": UNIFORM, "n": 40,
                                          "prior": {"family": "histogram", "law": "geometric", "param": 0.5, "m_max": 16}})
        rows = run(cfg).rows
        assert rows[-1]["H_pred"] < 0.5 and rows[0]["H_pred"] == pytest.approx(0.0, abs=1e-7)

    def test_conjugate_prior_rejects_sets(self):
        with pytest.raises(ConfigError, match="^prior.family"):
            consistency_config(prior={"family": "polya", "a": {"kind": "power", "rate": 2}})


class TestMartingale:
    def test_singleton_slope(self):
        s = run(martingale_config()).summary
        # each step adds log(2 X), whose mean under the uniform law is log 2 - 1
        slope = s["log_L_slope"]
        assert slope["mean"] < 0
        assert abs(slope["mean"] - (math.log(2) - 1)) < 3 * slope["se"]
        assert s["predicted_slope_from_distance"] == pytest.approx(math.log(2) - 1, abs=1e-8)

    def test_whole_space_evidence(self):
        cfg = martingale_config(set=None, replicates=30, prior={"family": "discrete", "atoms": [UNIFORM, LINEAR, {"name": "reflected-linear"}]})
        s = run(cfg).summary
        assert max(abs(v) for v in s["terminal_log_I_over_N"]) < 0.05


class TestSummability:
    def _run(self, prior):
        cfg = ExperimentConfig.from_dict({"scenario": "summability", "seed": 0, "prior": prior})
        return run(cfg)

    def test_polya(self):
        res = self._run({"family": "polya", "a": {"kind": "power", "rate": 3.5}})
        assert res.rows[0]["verdict"] == "Summable"
        rep = res.summary["reports"][0]
        assert rep["details"]["r"] == pytest.approx(0.125) and rep["schema"]

    def test_harmonic_signature(self):
        res = self._run({"family": "discrete", "law": {"kind": "polynomial", "param": 2}})
        rep = res.summary["reports"][0]
        assert rep["verdict"] == "Divergent" and rep["witness"]

    def test_finite_prior(self):
        res = self._run({"family": "discrete", "atoms": [UNIFORM, LINEAR, {"name": "reflected-linear"}]})
        assert res.rows[0]["verdict"] == "Summable"
        assert res.rows[0]["total_bound"] == pytest.approx(3 * math.sqrt(1 / 3))

    def test_several_priors(self):
        res = self._run([{"family": "mixture", "weights": ["gaussian", 1.0], "counts": ["exponential", 10]},
                         {"family": "mixture", "weights": ["geometric", 0.5], "counts": ["exponential", 10]}])
        assert [r["verdict"] for r in res.rows] == ["Summable", "Divergent"]


def write_config(tmp_path, cfg: ExperimentConfig, name="cfg.json"):
    p = tmp_path / name
    p.write_text(cfg.dumps())
    return p


class TestCli:
    def test_divergence(self, capsys):
        assert main(["divergence", "--f", "uniform", "--g", "2x", "--metric", "hellinger-h"]) == 0
        assert capsys.readouterr().out.strip() == "0.057191"

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2

    def test_unknown_flag(self, capsys):
        assert main(["simulate", "--bogus"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"scenario": "consistency", "seed": 1}))
        assert main(["simulate", "--config", str(p)]) == 2

    def test_numerical_failure(self, tmp_path):
        # data drawn from the left half only; an atom supported on the right half
        # makes every likelihood vanish
        cfg = consistency_config(truth={"name": "piecewise", "edges": [0, 0.5, 1], "heights": [2, 0]},
                                 prior={"family": "discrete", "atoms": [{"name": "piecewise", "edges": [0, 0.5, 1], "heights": [0, 2]}]},
                                 epsilon=None, scenario="predictive", n=5)
        assert main(["simulate", "--config", str(write_config(tmp_path, cfg))]) == 3

    @pytest.mark.parametrize("fmt", ["csv", "json"])
    def test_byte_identical_reruns(self, tmp_path, fmt):
        p = write_config(tmp_path, consistency_config(n=50, replicates=3))
        outs = []
        for d in ("a", "b"):
            assert main(["simulate", "--config", str(p), "--out", str(tmp_path / d), "--format", fmt]) == 0
            outs.append(sorted((f.name, f.read_bytes()) for f in (tmp_path / d).iterdir()))
        assert outs[0] == outs[1]

    def test_workers_do_not_change_output(self, tmp_path):
        p = write_config(tmp_path, consistency_config(n=30, replicates=4))
        main(["simulate", "--config", str(p), "--out", str(tmp_path / "one")])
        main(["simulate", "--config", str(p), "--out", str(tmp_path / "two"), "--workers", "2"])
        assert (tmp_path / "one" / "consistency.csv").read_bytes() == (tmp_path / "two" / "consistency.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        p = write_config(tmp_path, consistency_config(n=10))
        main(["simulate", "--config", str(p), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(p), "--out", str(tmp_path / "b"), "--seed", "8"])
        assert (tmp_path / "a" / "consistency.csv").read_bytes() != (tmp_path / "b" / "consistency.csv").read_bytes()

    def test_command_must_match_scenario(self, tmp_path):
        p = write_config(tmp_path, consistency_config(n=10))
        assert main(["martingale", "--config", str(p)]) == 2


class TestReplay:
    def test_csv_rows_replay(self, tmp_path):
        cfg = consistency_config(n=60, replicates=2)
        paths = write_result(run(cfg), tmp_path)
        rows = read_trace_csv(paths[0])
        replay_check(cfg, rows)
        assert json.loads(paths[1].read_text())["schema"]

    def test_tampered_row_is_caught(self, tmp_path):
        cfg = consistency_config(n=20)
        rows = read_trace_csv(write_result(run(cfg), tmp_path)[0])
        rows[7]["log_L"] += 1e-6
        with pytest.raises(ValueError):
            replay_check(cfg, rows)

    def test_header_required(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("replicate,n\n0,0\n")
        with pytest.raises(ValueError):
            read_trace_csv(p)
