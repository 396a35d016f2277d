import csv
import hashlib
import json
import tempfile
import unittest
from pathlib import Path
import numpy as np
from typer.testing import CliRunner
from src.cli.commands import app
from src.cli.runner import (
    EXIT_CAPACITY,
    EXIT_CONFIG,
    EXIT_NONCONVERGENCE,
    EXIT_OK,
    load_config,
    lq_params,
    manifest_path,
    run,
    run_name,
)
from src.db.artifact_store import ArtifactStore
from src.errors import InvalidModelError, UnsupportedFamilyError
from src.model.market import lq_market
from src.schemas.experiment_schemas import ExperimentConfig
from src.schemas.model_schemas import LQParams, PerturbationParams

MODEL = {
    "N": 2,
    "coefficients": {
        "family": "lq",
        "lq": {"sigma0": 0.2, "sigma": 0.3, "l0": 0.1},
    },
}


class TestArtifactStore(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.store = ArtifactStore(self.tmp.name, "unit_1")

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_format(self):
        target = self.store.write_csv(
            "values", ["k", "value"], [[0, 0.1], [1, np.float64(1 / 3)]]
        )
        self.assertEqual(target.name, "unit_1_values.csv")
        raw = target.read_bytes()
        self.assertNotIn(b"\r", raw)
        self.assertEqual(
            raw.decode("utf-8"), "k,value\n0,0.1\n1,0.3333333333333333\n"
        )

    def test_manifest_hashes(self):
        target = self.store.write_json("summary", {"b": 1, "a": [1.5]})
        manifest = json.loads(
            self.store.write_manifest("{}", 0.5, "ok").read_text()
        )
        digest = hashlib.sha256(target.read_bytes()).hexdigest()
        self.assertEqual(manifest["artifacts"][0]["sha256"], digest)
        self.assertEqual(
            manifest["config_sha256"], hashlib.sha256(b"{}").hexdigest()
        )
        self.assertEqual(manifest["status"], "ok")
        self.assertIn("numpy", manifest["versions"])

    def test_empty_run_name(self):
        with self.assertRaises(ValueError):
            ArtifactStore(self.tmp.name, "")


class TestLoadConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, name, document):
        path = self.root / name
        path.write_text(
            document if isinstance(document, str) else json.dumps(document)
        )
        return str(path)

    def test_overrides(self):
        path = self._write("run.json", {"kind": "validate", "model": MODEL})
        config = load_config(
            path, {"kind": "validate", "seed": 5, "threads": 2, "out": None}
        )
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.solver.threads, 2)

    def test_kind_mismatch(self):
        path = self._write("run.json", {"kind": "validate", "seed": 1})
        with self.assertRaises(InvalidModelError) as context:
            load_config(path, {"kind": "solve-lattice"})
        self.assertIn("does not match", str(context.exception))

    def test_model_file_is_relative_to_config(self):
        self._write("model.json", MODEL)
        path = self._write("run.json", {"model_file": "model.json"})
        config = load_config(path, {"kind": "solve-lattice"})
        self.assertEqual(
            Path(config.model_file), self.root / "model.json"
        )

    def test_unreadable_documents(self):
        with self.assertRaises(InvalidModelError):
            load_config(str(self.root / "missing.json"))
        with self.assertRaises(InvalidModelError):
            load_config(self._write("bad.json", "{not json"))
        with self.assertRaises(InvalidModelError):
            load_config(self._write("list.json", "[1, 2]"))

    def test_lq_params_family(self):
        model = lq_market(
            LQParams(), N=2, perturbation=PerturbationParams(kappa=0.1)
        )
        with self.assertRaises(UnsupportedFamilyError):
            lq_params(model)
        self.assertEqual(lq_params(lq_market(LQParams(), N=2)).gamma_f, 1.0)


class TestRun(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def _config(self, **fields):
        document = {
            "kind": "solve-lattice",
            "model": MODEL,
            "lattice": {"M": 1},
        }
        document.update(fields)
        return ExperimentConfig.model_validate(document)

    def _manifest(self, config, out=None):
        return json.loads(manifest_path(config, out or self.out).read_text())

    def test_solve_lattice_with_cross_check(self):
        config = self._config()
        self.assertEqual(run(config, self.out), EXIT_OK)
        manifest = self._manifest(config)
        self.assertEqual(manifest["status"], "ok")
        summary = manifest["summary"]
        self.assertLess(summary["newton_max_difference"], 1e-7)
        self.assertLess(summary["max_clearing_residual"], 1e-12)
        files = [entry["file"] for entry in manifest["artifacts"]]
        self.assertIn("solve-lattice_noseed_phi.csv", files)
        self.assertNotIn("solve-lattice_noseed_lattice.csv", files)
        header = (
            Path(self.out, "solve-lattice_noseed_X.csv")
            .read_text()
            .splitlines()[0]
        )
        self.assertEqual(header, "step,node,agent,coordinate,value")

    def test_artifacts_are_reproducible(self):
        config = self._config()
        with tempfile.TemporaryDirectory() as other:
            run(config, self.out)
            run(config, other)
            for name in ("X", "Y", "Zij", "phi"):
                file = f"solve-lattice_noseed_{name}.csv"
                self.assertEqual(
                    Path(self.out, file).read_bytes(),
                    Path(other, file).read_bytes(),
                )

    def test_invalid_model_exit_code(self):
        model = dict(
            MODEL, coefficients={"family": "lq", "lq": {"gamma_f": -1.0}}
        )
        config = self._config(model=model)
        self.assertEqual(run(config, self.out), EXIT_CONFIG)
        self.assertEqual(self._manifest(config)["status"], "invalid")

    def test_capacity_exit_code(self):
        config = self._config(lattice={"M": 2, "node_limit": 10})
        self.assertEqual(run(config, self.out), EXIT_CAPACITY)
        self.assertEqual(self._manifest(config)["status"], "capacity")

    def test_nonconvergence_exit_code(self):
        config = self._config(solver={"max_iters": 1, "tol": 1e-14})
        self.assertEqual(run(config, self.out), EXIT_NONCONVERGENCE)
        history = Path(self.out, "solve-lattice_noseed_residual_history.csv")
        self.assertTrue(history.exists())

    def test_newton_disabled(self):
        config = self._config(
            kind="solve-newton", solver={"newton_enabled": False}
        )
        self.assertEqual(run(config, self.out), EXIT_CONFIG)

    def test_missing_kind(self):
        config = ExperimentConfig(model=MODEL)
        self.assertEqual(run(config, self.out), EXIT_CONFIG)

    def _rows(self, config, name):
        path = Path(self.out, f"{run_name(config)}_{name}.csv")
        with open(path, newline="") as f:
            return list(csv.DictReader(f))

    def test_lattice_dump(self):
        config = self._config(dump_lattice=True)
        self.assertEqual(run(config, self.out), EXIT_OK)
        rows = self._rows(config, "lattice")
        self.assertEqual(
            list(rows[0]),
            ["step", "node", "probability", "process", "component", "value"],
        )
        self.assertEqual(len(rows), 18 + 18 + 9)
        self.assertEqual({row["process"] for row in rows}, {"X", "Y", "phi"})

    def test_lq_oracle_price_paths(self):
        config = self._config(
            kind="lq-oracle", seed=7, paths=3, time_steps=4, n_grid=[2]
        )
        self.assertEqual(run(config, self.out), EXIT_OK)
        rows = self._rows(config, "price_paths")
        self.assertEqual(
            list(rows[0]),
            [
                "path",
                "step",
                "coordinate",
                "xbar_N",
                "xbar",
                "phi_ho",
                "phi_mfg",
            ],
        )
        self.assertEqual(len(rows), 3 * 5)
        start = [row for row in rows if row["step"] == "0"]
        for row in start:
            self.assertEqual(float(row["xbar"]), 0.0)

    def test_stability_calibrates_at_smallest_step(self):
        config = self._config(
            kind="experiment-stability", stability_steps=[0.2, 0.1]
        )
        self.assertEqual(run(config, self.out), EXIT_OK)
        summary = self._manifest(config)["summary"]
        self.assertTrue(summary["ratio_invariant"])
        rows = {
            float(row["h"]): row for row in self._rows(config, "stability")
        }
        self.assertAlmostEqual(
            summary["price_constant"], 2.0 * float(rows[0.1]["price_ratio"])
        )

    def test_clearing_matches_closed_form(self):
        config = self._config(kind="experiment-clearing", n_grid=[2, 4, 8])
        self.assertEqual(run(config, self.out), EXIT_OK)
        summary = self._manifest(config)["summary"]
        self.assertLess(summary["max_prediction_gap"], 1e-6)
        rows = self._rows(config, "clearing")
        self.assertEqual([row["source"] for row in rows], ["lattice"] * 3)

    def test_convergence_writes_lattice_gaps(self):
        config = self._config(
            kind="experiment-convergence",
            seed=3,
            n_grid=[2, 4, 8],
            paths=20,
            time_steps=5,
            lattice={"M": 1, "node_limit": 100},
        )
        self.assertEqual(run(config, self.out), EXIT_OK)
        summary = self._manifest(config)["summary"]
        self.assertEqual(summary["strong_gap_sizes"], [2, 4])
        rows = self._rows(config, "strong_gap")
        self.assertEqual([int(row["N"]) for row in rows], [2, 4])
        for row in rows:
            self.assertGreater(float(row["gap"]), 0.0)

    def test_validate_is_seeded(self):
        config = self._config(kind="validate", seed=4, samples=200)
        self.assertEqual(run(config, self.out), EXIT_OK)
        summary = self._manifest(config)["summary"]
        self.assertTrue(summary["all_passed"])
        self.assertEqual(summary["failures"], [])


class TestCommands(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()

    def test_schema(self):
        result = self.runner.invoke(app, ["schema"])
        self.assertEqual(result.exit_code, 0)
        self.assertIn("model_file", result.output)

    def test_missing_config_exits_with_config_code(self):
        result = self.runner.invoke(
            app, ["solve-lattice", "--config", "no/such/file.json"]
        )
        self.assertEqual(result.exit_code, EXIT_CONFIG)

    def test_solve_lattice_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp, "run.json")
            path.write_text(json.dumps({"model": MODEL, "lattice": {"M": 1}}))
            result = self.runner.invoke(
                app, ["solve-lattice", "--config", str(path), "--out", tmp]
            )
            self.assertEqual(result.exit_code, 0, result.output)
            self.assertTrue(
                Path(tmp, "solve-lattice_noseed_manifest.json").exists()
            )


if __name__ == "__main__":
    unittest.main()
