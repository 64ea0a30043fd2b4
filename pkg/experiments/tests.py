import copy
import dataclasses
import json
import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APITestCase

from factor_state.services.factors import (
    DecisionKind,
    FactorState,
    RefreshDecision,
)
from optimizers.exceptions import NonFiniteUpdate
from optimizers.services.blocks import BlockStepReport
from optimizers.services.blocks import step as optimizer_step

from .exceptions import ConfigError
from .models import ExperimentRun
from .services.invariants import (
    CHECKS,
    DIRECTIONAL_CHECKS,
    CheckResult,
    eshampoo_beats_shampoo,
    front_loading_profile,
    gradient_checks,
    grafting_identity,
    identity_basis_reduction,
    iid_norm_equality,
    norm_sandwich,
    optimal_correction_check,
    recompute_front_loading,
    run_suite,
    shampoo2_rank_one,
    stale_error_identity,
    vec_equivalence,
    warm_qr_contract,
)
from .services.runner import (
    Comparison,
    compare_runs,
    format_table,
    parse_config,
    run_experiment,
    thread_cap,
    write_comparison_csv,
)
from .services.telemetry import (
    CSV_HEADER,
    TelemetryRow,
    read_telemetry,
    recompute_profile,
    rows_for_step,
)

BASE_CONFIG = {
    "name": "quadratic-adam",
    "seed": 0,
    "steps": 20,
    "task": {
        "name": "kron_quadratic",
        "seed": 0,
        "params": {"m": 8, "n": 6},
    },
    "schedule": {"kind": "constant", "lr": 0.01},
    "optimizer": {"variant": "adam"},
}


# names accepted by check_invariants --only
EXACT_CHECK_NAMES = (
    "stale_error_identity",
    "warm_qr_contract",
    "norm_sandwich",
    "iid_norm_equality",
    "shampoo2_rank_one",
    "optimal_correction_check",
    "grafting_identity",
    "identity_basis_reduction",
    "vec_equivalence",
    "gradient_checks",
)


def config_data(**overrides):
    data = copy.deepcopy(BASE_CONFIG)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return data


def mlp_data(name, steps=30, policy=None, variant="eshampoo", **extra):
    optimizer = {"variant": variant}
    if policy is not None:
        optimizer["policy"] = policy
    return config_data(
        name=name,
        steps=steps,
        batch_size=32,
        task={
            "name": "mlp_toy",
            "seed": 1,
            "params": {"hidden": 8, "num_points": 256},
        },
        optimizer=optimizer,
        **extra,
    )


def row(step, block, factor, eig_count):
    return TelemetryRow(
        step=step,
        loss=1.0,
        grad_norm=1.0,
        block=block,
        factor=factor,
        criterion=None,
        decision="",
        qr_iters=0,
        eig_count=eig_count,
        update_norm=0.0,
        graft_norm=None,
        wall_ms=0.0,
    )


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()
        super().tearDown()

    def write_config(self, data, name="config.json"):
        data = dict(data)
        data.setdefault("output_dir", str(self.dir / data["name"]))
        path = self.dir / name
        path.write_text(json.dumps(data))
        return path


class ConfigValidationTests(SimpleTestCase):
    def test_minimal_config_gets_defaults(self):
        cfg = parse_config(config_data())
        self.assertEqual(cfg.steps, 20)
        self.assertEqual(cfg.telemetry_every, 1)
        self.assertEqual(cfg.optimizer.beta2, 0.95)
        self.assertEqual(cfg.optimizer.policy.mode.value, "fixed_eigh")
        self.assertEqual(cfg.optimizer.schedule(5), 0.01)

    def test_steps_must_be_positive(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(config_data(steps=0))
        self.assertIn("steps", ctx.exception.errors)

    def test_unknown_task(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(config_data(task={"name": "imagenet"}))
        self.assertIn("task", ctx.exception.errors)

    def test_bad_task_params(self):
        with self.assertRaises(ConfigError):
            parse_config(config_data(task={"params": {"m": 0, "n": 2}}))

    def test_unknown_variant(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(config_data(optimizer={"variant": "lion"}))
        self.assertIn("optimizer", ctx.exception.errors)

    def test_tau_range(self):
        policy = {"mode": "adaptive_eigh", "tau": 1.0}
        with self.assertRaises(ConfigError):
            parse_config(
                config_data(optimizer={"variant": "adam", "policy": policy})
            )

    def test_warmup_cannot_exceed_horizon(self):
        schedule = {
            "kind": "linear_warmup_cosine",
            "lr": 0.1,
            "warmup_steps": 30,
            "total_steps": 10,
        }
        with self.assertRaises(ConfigError):
            parse_config(config_data(schedule=schedule))

    def test_cosine_horizon_defaults_to_run_length(self):
        schedule = {"kind": "linear_warmup_cosine", "lr": 0.1}
        cfg = parse_config(config_data(schedule=schedule, steps=40))
        self.assertEqual(cfg.optimizer.schedule.total_steps, 40)
        self.assertAlmostEqual(cfg.optimizer.schedule(40), 0.0)

    def test_batch_size_reaches_minibatch_tasks_only(self):
        cfg = parse_config(mlp_data("mlp"))
        self.assertEqual(cfg.task["params"]["batch_size"], 32)
        cfg = parse_config(config_data(batch_size=4))
        self.assertNotIn("batch_size", cfg.task["params"])

    def test_oracle_mode_on_a_huge_block_is_a_config_error(self):
        data = config_data(
            task={"params": {"m": 70, "n": 70}},
            optimizer={
                "variant": "eshampoo",
                "correction_mode": "oracle_optimal",
            },
        )
        with self.assertRaises(ConfigError):
            run_experiment(parse_config(data), write=False)


class TelemetryTests(TempDirMixin, SimpleTestCase):
    def test_profile_conserves_counts(self):
        rows = [
            row(1, "W", "L", 1),
            row(1, "W", "R", 1),
            row(2, "W", "L", 3),
            row(2, "W", "R", 1),
            row(3, "W", "L", 3),
            row(3, "W", "R", 4),
        ]
        profile = recompute_profile(rows, 3)
        self.assertEqual(profile, [2, 2, 3])
        self.assertEqual(sum(profile), 3 + 4)

    def test_profile_by_parameter_type(self):
        rows = [row(1, "W", "L", 1), row(2, "b", "full", 2)]
        profile = recompute_profile(rows, 2, vector_blocks={"b"})
        self.assertEqual(profile, {"matrix": [1, 0], "vector": [0, 2]})

    def test_factorless_rows_are_ignored(self):
        self.assertEqual(recompute_profile([row(1, "W", "-", None)]), [0] * 3)

    def test_zero_update_is_marked_in_decisions(self):
        vanished = BlockStepReport(
            block="W",
            lr=0.1,
            update_norm=0.0,
            graft_norm=0.5,
            zero_update=True,
            decisions={"L": RefreshDecision(DecisionKind.SKIPPED, 0.01)},
            factors={"L": FactorState.initial(2)},
        )
        plain = BlockStepReport(
            block="b",
            lr=0.1,
            update_norm=0.2,
            graft_norm=None,
            zero_update=False,
            decisions={},
            factors={},
        )
        rows = rows_for_step(3, 1.0, 1.0, [vanished, plain], 0.0)
        self.assertEqual(
            [r.decision for r in rows], ["Skipped+ZeroUpdate", ""]
        )

    def test_written_csv_matches_returned_rows(self):
        cfg = parse_config(
            mlp_data(
                "csv",
                steps=6,
                telemetry_every=2,
                output_dir=str(self.dir / "csv"),
            )
        )
        result = run_experiment(cfg)
        path = Path(result.summary["telemetry_path"])
        header = path.read_text().splitlines()[0]
        self.assertEqual(
            header,
            "step,loss,grad_norm,block,factor,criterion,decision,"
            "qr_iters,eig_count,update_norm,graft_norm,wall_ms",
        )
        self.assertEqual(tuple(header.split(",")), CSV_HEADER)
        self.assertEqual(read_telemetry(path), result.rows)
        self.assertEqual(sorted({r.step for r in result.rows}), [2, 4, 6])


@override_settings(KRONOPT_THREADS=2)
class RunExperimentTests(TempDirMixin, SimpleTestCase):
    def test_zero_learning_rate_keeps_the_loss(self):
        cfg = parse_config(
            config_data(steps=1, schedule={"kind": "constant", "lr": 0.0})
        )
        summary = run_experiment(cfg, write=False).summary
        self.assertEqual(summary["final_loss"], summary["initial_loss"])
        self.assertEqual(summary["status"], "completed")

    def test_adam_reduces_quadratic_loss(self):
        data = config_data(
            steps=500, task={"params": {"m": 8, "n": 8, "noise": 0.0}}
        )
        summary = run_experiment(parse_config(data), write=False).summary
        self.assertLess(summary["final_loss"], summary["initial_loss"])

    def test_frozen_policy_computes_each_basis_once(self):
        cfg = parse_config(mlp_data("frozen", policy={"mode": "frozen"}))
        summary = run_experiment(cfg, write=False).summary
        self.assertTrue(summary["eig_counts"])
        for count in summary["eig_counts"].values():
            self.assertEqual(count, 1)

    def test_same_config_same_telemetry(self):
        policy = {"mode": "adaptive_qr", "tau": 0.05, "frequency": 2}
        first = run_experiment(
            parse_config(mlp_data("a", policy=policy)), write=False
        )
        second = run_experiment(
            parse_config(mlp_data("a", policy=policy)), write=False
        )

        def timeless(rows):
            return [dataclasses.replace(r, wall_ms=0.0) for r in rows]

        self.assertTrue(first.rows)
        self.assertEqual(timeless(first.rows), timeless(second.rows))

    def test_non_finite_loss_aborts(self):
        data = config_data(
            steps=5, schedule={"kind": "constant", "lr": 1e200}
        )
        with self.assertLogs("experiments", level="WARNING"):
            summary = run_experiment(parse_config(data), write=False).summary
        self.assertEqual(summary["status"], "diverged")
        self.assertEqual(summary["aborted_at_step"], 2)
        self.assertEqual(summary["steps_completed"], 1)
        self.assertIsNone(summary["final_loss"])

    def test_divergence_inside_a_step_leaves_no_final_loss(self):
        cfg = parse_config(mlp_data("mid-step", steps=5, variant="adam"))
        stepped = []

        def second_block_fails(block, grad, opt, t):
            stepped.append(block.name)
            if len(stepped) == 2:
                raise NonFiniteUpdate(t)
            return optimizer_step(block, grad, opt, t)

        with mock.patch(
            "experiments.services.runner.step",
            side_effect=second_block_fails,
        ):
            with self.assertLogs("experiments", level="WARNING"):
                summary = run_experiment(cfg, write=False).summary
        self.assertEqual(summary["status"], "diverged")
        self.assertEqual(summary["aborted_at_step"], 1)
        self.assertEqual(summary["steps_completed"], 0)
        self.assertIsNotNone(summary["initial_loss"])
        self.assertIsNone(summary["final_loss"])

    def test_steps_to_target(self):
        data = config_data(steps=3, target_loss=1e12)
        summary = run_experiment(parse_config(data), write=False).summary
        self.assertEqual(summary["steps_to_target"], 0)
        data = config_data(steps=3, target_loss=-1.0)
        summary = run_experiment(parse_config(data), write=False).summary
        self.assertIsNone(summary["steps_to_target"])

    def test_summary_json_is_written(self):
        data = config_data(output_dir=str(self.dir / "run"))
        summary = run_experiment(parse_config(data)).summary
        stored = json.loads(Path(summary["summary_path"]).read_text())
        self.assertEqual(stored["final_loss"], summary["final_loss"])
        self.assertEqual(stored["total_eig_count"], 0)
        self.assertTrue(Path(summary["telemetry_path"]).exists())

    def test_grafted_run_reports_graft_norms(self):
        data = config_data(
            steps=10,
            optimizer={"variant": "shampoo_grafted"},
        )
        result = run_experiment(parse_config(data), write=False)
        for r in result.rows:
            self.assertAlmostEqual(r.update_norm, r.graft_norm, delta=1e-12)


@override_settings(KRONOPT_THREADS=2)
class CompareRunsTests(TempDirMixin, SimpleTestCase):
    def test_identical_configs_give_identical_rows(self):
        cfg = parse_config(config_data())
        comparison = compare_runs([cfg, cfg], write=False)
        first, second = (
            {k: v for k, v in r.items() if k != "wall_time_s"}
            for r in comparison.table
        )
        self.assertEqual(first, second)

    def test_adaptive_never_recomputes_more_than_fixed(self):
        runs = [
            parse_config(
                mlp_data(mode, policy={"mode": mode, "tau": 0.5})
            )
            for mode in ("fixed_eigh", "adaptive_eigh")
        ]
        fixed, adaptive = compare_runs(runs, write=False).table
        self.assertLessEqual(
            adaptive["total_eig_count"], fixed["total_eig_count"]
        )

    def test_shared_output_directory_is_split_per_run(self):
        shared = str(self.dir / "shared")
        slow, fast = (
            parse_config(
                config_data(
                    name="a",
                    output_dir=shared,
                    schedule={"kind": "constant", "lr": lr},
                )
            )
            for lr in (1e-3, 1e-1)
        )
        comparison = compare_runs([slow, fast])
        summaries = [result.summary for result in comparison.results]
        self.assertEqual(
            [Path(s["summary_path"]).parent for s in summaries],
            [self.dir / "shared" / "0-a", self.dir / "shared" / "1-a"],
        )
        self.assertNotEqual(
            summaries[0]["final_loss"], summaries[1]["final_loss"]
        )
        for summary in summaries:
            stored = json.loads(Path(summary["summary_path"]).read_text())
            self.assertEqual(stored["final_loss"], summary["final_loss"])
            rows = read_telemetry(summary["telemetry_path"])
            self.assertEqual(rows[-1].step, 20)

    def test_distinct_output_directories_are_kept(self):
        configs = [
            parse_config(
                config_data(name=name, output_dir=str(self.dir / name))
            )
            for name in ("first", "second")
        ]
        comparison = compare_runs(configs)
        self.assertEqual(
            [
                Path(r.summary["summary_path"]).parent
                for r in comparison.results
            ],
            [self.dir / "first", self.dir / "second"],
        )

    def test_mismatched_tasks(self):
        a = parse_config(config_data())
        b = parse_config(config_data(task={"params": {"m": 4, "n": 4}}))
        with self.assertRaises(ConfigError):
            compare_runs([a, b], write=False)

    @override_settings(KRONOPT_THREADS="many")
    def test_bad_thread_setting_is_a_config_error(self):
        with self.assertRaises(ConfigError) as ctx:
            compare_runs([parse_config(config_data())], write=False)
        self.assertIn("KRONOPT_THREADS", ctx.exception.errors)

    def test_thread_cap_parses_environment_strings(self):
        for raw, expected in (("3", 3), (2, 2)):
            with self.subTest(raw=raw):
                with override_settings(KRONOPT_THREADS=raw):
                    self.assertEqual(thread_cap(), expected)
        for raw in ("0", "-1", "", None):
            with self.subTest(raw=raw):
                with override_settings(KRONOPT_THREADS=raw):
                    with self.assertRaises(ConfigError):
                        thread_cap()

    def test_table_and_csv(self):
        comparison = compare_runs(
            [parse_config(config_data(name="only"))], write=False
        )
        text = format_table(comparison.table)
        self.assertTrue(text.splitlines()[0].startswith("name"))
        self.assertIn("only", text)
        path = write_comparison_csv(self.dir / "cmp.csv", comparison.table)
        self.assertEqual(len(path.read_text().splitlines()), 2)


class InvariantSuiteTests(SimpleTestCase):
    def test_exact_checks_pass_on_small_counts(self):
        results = [
            stale_error_identity(cases=10),
            warm_qr_contract(cases=5),
            norm_sandwich(steps=50),
            iid_norm_equality(),
            shampoo2_rank_one(cases=5),
            optimal_correction_check(cases=5, perturbations=100),
            grafting_identity(steps=30),
            identity_basis_reduction(cases=20),
            vec_equivalence(cases=5),
            gradient_checks(points=2),
        ]
        for result in results:
            self.assertTrue(result.passed, f"{result.name}: {result.detail}")
            self.assertIn(result.name, CHECKS)

    def test_registry_uses_the_documented_names(self):
        self.assertEqual(set(CHECKS), set(EXACT_CHECK_NAMES))
        self.assertEqual(
            set(DIRECTIONAL_CHECKS),
            {"eshampoo_beats_shampoo", "recompute_front_loading"},
        )

    def test_run_suite_selects_by_name(self):
        results = run_suite(["iid_norm_equality"])
        self.assertEqual([r.name for r in results], ["iid_norm_equality"])

    def test_unknown_check_name(self):
        with self.assertRaises(ValueError):
            run_suite(["nonsense"])


def fake_compare(final_losses):
    """compare_runs stand-in: sweeps are best at lr 1e-2."""

    def compare(configs, write=True):
        table = []
        for cfg in configs:
            if cfg.name.startswith("sweep-"):
                lr = float(cfg.name.split("-", 1)[1])
                loss = abs(math.log10(lr) + 2.0)
            else:
                loss = final_losses[cfg.seed][cfg.name]
            table.append({"final_loss": loss})
        return Comparison(table=table, results=[])

    return compare


class DirectionalCheckTests(SimpleTestCase):
    def test_front_loading_profile_conserves_counts(self):
        profile, summary = front_loading_profile(0, steps=30)
        self.assertEqual(len(profile), 3)
        self.assertEqual(sum(profile), summary["total_eig_count"])
        self.assertGreaterEqual(profile[0], len(summary["eig_counts"]))

    def test_front_loading_needs_two_of_three_seeds(self):
        cases = (
            ([[5, 1, 1], [4, 2, 2], [1, 1, 6]], True),
            ([[1, 1, 5], [1, 2, 2], [6, 1, 1]], False),
        )
        for profiles, expected in cases:
            with self.subTest(profiles=profiles):
                with mock.patch(
                    "experiments.services.invariants.front_loading_profile",
                    side_effect=[(p, {}) for p in profiles],
                ):
                    result = recompute_front_loading(seeds=3)
                self.assertEqual(result.passed, expected)
                self.assertIn(str(profiles), result.detail)

    def test_front_loading_at_reduced_scale(self):
        result = recompute_front_loading(seeds=1, steps=30)
        self.assertEqual(result.name, "recompute_front_loading")
        self.assertIn("per-third recomputations [[", result.detail)

    def test_eshampoo_ordering_needs_two_of_three_seeds(self):
        cases = (
            ((1.0, 1.0, 3.0), True),
            ((1.0, 3.0, 3.0), False),
        )
        for eshampoo_losses, expected in cases:
            losses = {
                seed: {"eshampoo": loss, "shampoo": 2.0}
                for seed, loss in enumerate(eshampoo_losses)
            }
            with self.subTest(losses=eshampoo_losses):
                with mock.patch(
                    "experiments.services.invariants.compare_runs",
                    side_effect=fake_compare(losses),
                ):
                    result = eshampoo_beats_shampoo(seeds=3, steps=40)
                self.assertEqual(result.passed, expected)
                self.assertIn("'eshampoo': 0.01", result.detail)
                self.assertIn("'shampoo': 0.01", result.detail)

    def test_eshampoo_ordering_at_reduced_scale(self):
        result = eshampoo_beats_shampoo(seeds=1, steps=8, sweep_steps=2)
        self.assertEqual(result.name, "eshampoo_beats_shampoo")
        self.assertIn(result.passed, (True, False))
        self.assertIn("seed 0:", result.detail)


class CommandTests(TempDirMixin, TestCase):
    def test_run_experiment_records_the_run(self):
        path = self.write_config(config_data())
        out = StringIO()
        call_command("run_experiment", "--config", str(path), stdout=out)
        self.assertIn("completed after 20 steps", out.getvalue())
        run = ExperimentRun.objects.get()
        self.assertEqual(run.variant, "adam")
        self.assertEqual(run.task_name, "kron_quadratic")
        self.assertEqual(run.steps_completed, 20)
        self.assertTrue(Path(run.summary_path).exists())

    def test_invalid_config_exits_with_two(self):
        path = self.write_config(config_data(steps=0))
        with self.assertRaises(CommandError) as ctx:
            call_command("run_experiment", "--config", str(path))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_missing_config_file_exits_with_two(self):
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "run_experiment", "--config", str(self.dir / "nope.json")
            )
        self.assertEqual(ctx.exception.returncode, 2)

    def test_compare_runs_command(self):
        paths = [
            self.write_config(config_data(name=name), f"{name}.json")
            for name in ("first", "second")
        ]
        out = StringIO()
        call_command(
            "compare_runs",
            "--configs",
            *map(str, paths),
            "--output",
            str(self.dir / "cmp.csv"),
            stdout=out,
        )
        self.assertIn("Compared 2 runs", out.getvalue())
        self.assertEqual(ExperimentRun.objects.count(), 2)
        self.assertTrue((self.dir / "cmp.csv").exists())

    def test_run_and_compare_aliases(self):
        path = self.write_config(config_data(name="alias"))
        out = StringIO()
        call_command("run", "--config", str(path), stdout=out)
        self.assertIn("alias: completed after 20 steps", out.getvalue())
        call_command(
            "compare",
            "--configs",
            str(path),
            str(path),
            "--output",
            str(self.dir / "alias.csv"),
            stdout=out,
        )
        self.assertIn("Compared 2 runs", out.getvalue())
        self.assertEqual(ExperimentRun.objects.count(), 3)
        paths = set(
            ExperimentRun.objects.values_list("summary_path", flat=True)
        )
        self.assertEqual(len(paths), 3)

    def test_alias_maps_config_errors_to_two(self):
        path = self.write_config(config_data(steps=0))
        with self.assertRaises(CommandError) as ctx:
            call_command("run", "--config", str(path))
        self.assertEqual(ctx.exception.returncode, 2)

    @override_settings(KRONOPT_THREADS="many")
    def test_bad_thread_setting_exits_with_two(self):
        path = self.write_config(config_data())
        with self.assertRaises(CommandError) as ctx:
            call_command("compare", "--configs", str(path), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_every_documented_check_name_is_accepted(self):
        passing = {
            name: (lambda name=name: CheckResult(name, True, "ok"))
            for name in EXACT_CHECK_NAMES
        }
        out = StringIO()
        with mock.patch.dict(CHECKS, passing):
            call_command(
                "check_invariants", "--only", *EXACT_CHECK_NAMES, stdout=out
            )
        self.assertIn("optimal_correction_check: ok", out.getvalue())
        self.assertIn(
            f"All {len(EXACT_CHECK_NAMES)} checks passed", out.getvalue()
        )

    def test_check_invariants_command(self):
        out = StringIO()
        call_command(
            "check_invariants", "--only", "iid_norm_equality", stdout=out
        )
        self.assertIn("iid_norm_equality", out.getvalue())
        self.assertIn("All 1 checks passed", out.getvalue())

    def test_failing_check_exits_with_one(self):
        failing = [CheckResult("broken", False, "forced")]
        with mock.patch(
            "experiments.management.commands.check_invariants.run_suite",
            return_value=failing,
        ):
            with self.assertRaises(CommandError) as ctx:
                call_command("check_invariants", stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)


class RunRegistryAPITests(APITestCase):
    def setUp(self):
        common = dict(
            seed=0,
            config={},
            steps_completed=10,
            wall_time_s=0.1,
        )
        self.adam = ExperimentRun.objects.create(
            name="quad-adam",
            task_name="kron_quadratic",
            variant="adam",
            final_loss=1.5,
            **common,
        )
        self.soap = ExperimentRun.objects.create(
            name="mlp-eshampoo",
            task_name="mlp_toy",
            variant="eshampoo",
            status=ExperimentRun.STATUS_DIVERGED,
            aborted_at_step=4,
            **common,
        )

    def test_list_runs(self):
        response = self.client.get(reverse("run-list"))  # /api/runs/
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data), 2)

    def test_filter_by_variant_and_task(self):
        url = reverse("run-list")
        response = self.client.get(url, {"variant": "adam"})
        self.assertEqual([r["name"] for r in response.data], ["quad-adam"])
        response = self.client.get(url, {"task": "mlp_toy"})
        self.assertEqual(
            [r["name"] for r in response.data], ["mlp-eshampoo"]
        )

    def test_retrieve_run(self):
        url = reverse("run-detail", args=[self.soap.id])
        response = self.client.get(url)
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["status"], "diverged")
        self.assertEqual(response.data["aborted_at_step"], 4)

    def test_read_only(self):
        response = self.client.post(reverse("run-list"), {"name": "x"})
        self.assertEqual(
            response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED
        )
        self.assertEqual(ExperimentRun.objects.count(), 2)
