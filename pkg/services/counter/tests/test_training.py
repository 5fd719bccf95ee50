"""
Tests for the optimizer, training loop, checkpoints, evaluation, alignment
maps and comparison suites
"""

import csv
import json

import numpy as np
import pytest

from errors import ConfigurationError, DataError, NumericError
from models.config_models import AblationVariant, OptimizerConfig, ScheduleConfig
from models.report_models import SuiteRow
from network import build_model
from objectives.losses import count_loss, tbd_loss
from objectives.metrics import region_eval, region_masks
from scenes.dataset import make_dataset
from tensor.autograd import Parameter
from tensor.gradcheck import relative_error
from training.ablation import METRIC_COLUMNS, run_ablation_suite, run_shots_suite, summarize, with_shots
from training.asmap import alignment_maps, export_asmap, region_alignment
from training.checkpoint import load_checkpoint, save_checkpoint
from training.evaluator import evaluate, predict_sample, write_predictions_csv
from training.optimizer import AdamW, clip_grad_norm, learning_rate
from training.trainer import Trainer, flip_sample, train


@pytest.fixture
def quick_config(tiny_config):
    return tiny_config.with_changes(epochs=2)


# ============================================================================
# OPTIMIZER
# ============================================================================

class TestSchedule:

    @pytest.mark.parametrize("epoch, expected", [(0, 1e-3), (99, 1e-3), (100, 5e-4), (250, 2.5e-4)])
    def test_halving(self, epoch, expected):
        """lr halves every E epochs"""
        assert learning_rate(1e-3, epoch, ScheduleConfig(halve_every=100)) == pytest.approx(expected, rel=1e-15)

    def test_short_period(self):
        """E=1 halves every epoch"""
        assert learning_rate(1.0, 3, ScheduleConfig(halve_every=1)) == 0.125


class TestClipping:

    def test_scales_down(self):
        """A norm-5 gradient clipped to 1 becomes unit length"""
        p = Parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])
        assert clip_grad_norm([p], 1.0) == 5.0
        assert np.allclose(p.grad, [0.6, 0.8])

    def test_global_norm(self):
        """The norm spans every parameter and skips missing gradients"""
        a, b, c = Parameter(np.zeros(1)), Parameter(np.zeros((1, 1))), Parameter(np.zeros(3))
        a.grad, b.grad = np.array([6.0]), np.array([[8.0]])
        assert clip_grad_norm([a, b, c], 100.0) == 10.0
        assert a.grad[0] == 6.0
        assert c.grad is None

    def test_disabled(self):
        """max_norm=0 leaves gradients alone"""
        p = Parameter(np.zeros(2))
        p.grad = np.array([30.0, 40.0])
        clip_grad_norm([p], 0.0)
        assert np.array_equal(p.grad, [30.0, 40.0])


class TestAdamW:

    def test_first_step(self):
        """The first step moves each coordinate by lr against the gradient sign"""
        p = Parameter(np.array([1.0, -2.0, 0.5]))
        p.grad = np.array([0.3, -7.0, 1e-3])
        opt = AdamW([p], OptimizerConfig(lr=0.01, weight_decay=0.0))
        opt.step()
        assert np.allclose(p.data, [0.99, -1.99, 0.49], atol=1e-6)

    def test_decay_rank(self):
        """Weight decay shrinks matrices only"""
        matrix, vector = Parameter(np.ones((2, 2))), Parameter(np.ones(2))
        matrix.grad, vector.grad = np.zeros((2, 2)), np.zeros(2)
        opt = AdamW([matrix, vector], OptimizerConfig(lr=0.1, weight_decay=0.5))
        opt.step()
        assert np.allclose(matrix.data, 0.95)
        assert np.array_equal(vector.data, np.ones(2))

    def test_zero_grad(self):
        """zero_grad clears every gradient"""
        p = Parameter(np.ones(2))
        p.grad = np.ones(2)
        opt = AdamW([p], OptimizerConfig())
        opt.zero_grad()
        assert p.grad is None


# ============================================================================
# TRAINING
# ============================================================================

class TestFlip:

    def test_involution(self, tiny_samples):
        """Flipping twice restores the arrays"""
        sample = tiny_samples[0]
        twice = flip_sample(flip_sample(sample))
        assert np.array_equal(twice.query, sample.query)
        assert np.array_equal(twice.density, sample.density)
        assert twice.boxes == sample.boxes

    def test_mirrors_points(self, tiny_samples):
        """x maps to W - x and the density mass is unchanged"""
        sample = tiny_samples[1]
        flipped = flip_sample(sample)
        width = sample.image_size[1]
        for (x, y), (fx, fy) in zip(sample.points, flipped.points):
            assert fx == pytest.approx(width - x)
            assert fy == y
        assert flipped.density.sum() == pytest.approx(sample.density.sum())
        assert flipped.box_sizes == sample.box_sizes


class TestTrainer:

    def test_batch_loss_terms(self, tiny_config, tiny_samples):
        """The total is count + lambda2 * tbd when there is one adaptation step"""
        result = Trainer(tiny_config, tiny_samples).batch_loss(tiny_samples[:2])
        assert result.aux == 0.0
        assert result.tbd > 0.0
        assert result.total.item() == pytest.approx(result.count + 0.05 * result.tbd, rel=1e-12)
        assert len(result.predicted) == 2

    def test_batch_loss_matches_objectives(self, tiny_config, tiny_samples):
        """Batch loss reproduces the objective functions on the model outputs"""
        trainer = Trainer(tiny_config, tiny_samples)
        batch = tiny_samples[:2]
        predictions = [trainer.model(s) for s in batch]
        n_objects = sum(s.count for s in batch)
        expected = count_loss([p.density for p in predictions], [s.density for s in batch], n_objects).item()
        assert trainer.batch_loss(batch).count == pytest.approx(expected, rel=1e-12)
        partitions = [trainer._partition(s, False) for s in batch]
        expected_tbd = tbd_loss([p.alignment for p in predictions], partitions).item()
        assert trainer.batch_loss(batch).tbd == pytest.approx(expected_tbd, rel=1e-12)

    def test_tbd_disabled(self, tiny_config, tiny_samples):
        """Without the TBD loss the term is zero"""
        config = tiny_config.with_changes(**{"ablation.tbd": False})
        assert Trainer(config, tiny_samples).batch_loss(tiny_samples[:2]).tbd == 0.0

    def test_full_model_gradients(self, tiny_config, tiny_samples):
        """Backprop through the whole network matches central differences on sampled parameters"""
        config = tiny_config.with_changes(**{"relation.iterations": 2})
        trainer = Trainer(config, tiny_samples)
        batch = tiny_samples[:2]
        params = trainer.model.parameters()

        loss = trainer.batch_loss(batch).total
        loss.backward()
        analytic = [None if p.grad is None else p.grad.copy() for p in params]

        pick = np.random.default_rng(99)
        checked = 0
        eps = 1e-6
        for _ in range(60):
            k = int(pick.integers(len(params)))
            p = params[k]
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            i = int(pick.integers(flat.size))
            original = flat[i]
            flat[i] = original + eps
            upper = trainer.batch_loss(batch).total.item()
            flat[i] = original - eps
            lower = trainer.batch_loss(batch).total.item()
            flat[i] = original
            numeric = (upper - lower) / (2 * eps)
            grad = 0.0 if analytic[k] is None else float(analytic[k].reshape(-1)[i])
            assert relative_error(grad, numeric, floor=1e-3) < 1e-4
            checked += 1
        assert checked >= 50

    def test_deterministic(self, tmp_path, quick_config, tiny_samples):
        """Two runs with the same seed write identical checkpoints and metrics"""
        train(quick_config, tiny_samples, tiny_samples[:1], out=tmp_path / "a")
        train(quick_config, tiny_samples, tiny_samples[:1], out=tmp_path / "b")
        for name in ("params.mtnsra", "metrics.jsonl", "config.yml"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_metrics_log(self, tmp_path, quick_config, tiny_samples):
        """One metrics line per epoch with the scheduled learning rate"""
        result = train(quick_config, tiny_samples, tiny_samples[:2], out=tmp_path / "run")
        lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2 == len(result.history)
        first = json.loads(lines[0])
        assert first["epoch"] == 0
        assert first["lr"] == quick_config.optimizer.lr
        assert first["eval_mae"] is not None

    def test_parameters_move(self, quick_config, tiny_samples):
        """A training epoch updates the parameters"""
        trainer = Trainer(quick_config, tiny_samples)
        before = {k: v.copy() for k, v in trainer.model.state_dict().items()}
        trainer.train_epoch(0)
        after = trainer.model.state_dict()
        assert any(not np.array_equal(before[k], after[k]) for k in before)

    def test_flip_augmentation(self, quick_config, tiny_samples):
        """Training with flips runs and stays finite"""
        config = quick_config.with_changes(augment_flip=True)
        metrics = Trainer(config, tiny_samples).train_epoch(0)
        assert np.isfinite(metrics.loss)

    def test_non_finite_loss(self, quick_config, tiny_samples):
        """A NaN loss aborts with NumericError"""
        trainer = Trainer(quick_config, tiny_samples)
        trainer.model.decoder.head.bias.data[:] = np.nan
        with pytest.raises(NumericError):
            trainer.train_epoch(0)

    def test_non_finite_gradient(self, monkeypatch, quick_config, tiny_samples):
        """A NaN gradient aborts with NumericError before any parameter is updated"""

        def poisoned(params, max_norm):
            target = next(p for p in params if p.grad is not None)
            target.grad = np.full_like(target.grad, np.nan)
            return clip_grad_norm(params, max_norm)

        monkeypatch.setattr("training.trainer.clip_grad_norm", poisoned)
        trainer = Trainer(quick_config, tiny_samples)
        before = [p.data.copy() for p in trainer.model.parameters()]
        with pytest.raises(NumericError):
            trainer.train_epoch(0)
        assert all(np.array_equal(b, p.data) for b, p in zip(before, trainer.model.parameters()))

    def test_count_loss_falls(self, tiny_config, tiny_samples):
        """On one scene the density term itself moves and ends below where it started"""
        result = train(tiny_config.with_changes(epochs=40), tiny_samples[:1])
        counts = [m.count_loss for m in result.history]
        assert len(set(counts)) > 1
        assert counts[-1] < counts[0]
        prediction = result.model(tiny_samples[0])
        assert prediction.density.data.sum() > 0.0

    def test_no_samples(self, quick_config):
        """Training needs samples"""
        with pytest.raises(DataError):
            Trainer(quick_config, [])


class TestCheckpoint:

    def test_round_trip(self, tmp_path, tiny_config, tiny_samples):
        """A reloaded model predicts identically"""
        model = build_model(tiny_config)
        save_checkpoint(model, tmp_path / "ckpt")
        loaded, config = load_checkpoint(tmp_path / "ckpt")
        assert config == tiny_config
        assert np.array_equal(loaded(tiny_samples[0]).density.data, model(tiny_samples[0]).density.data)

    def test_missing(self, tmp_path):
        """A directory without parameters raises DataError"""
        with pytest.raises(DataError):
            load_checkpoint(tmp_path)


# ============================================================================
# EVALUATION
# ============================================================================

class TestEvaluator:

    def test_zero_head(self, tiny_config, tiny_samples):
        """A model that predicts nothing has MAE equal to the mean count"""
        model = build_model(tiny_config)
        model.decoder.head.weight.data[:] = 0.0
        model.decoder.head.bias.data[:] = 0.0
        report = evaluate(model, tiny_samples)
        assert report.n == 4
        assert report.mae == pytest.approx(np.mean([s.count for s in tiny_samples]), abs=1e-9)

    def test_threads_agree(self, tiny_config, tiny_samples):
        """Threaded evaluation returns the same per-image counts in order"""
        model = build_model(tiny_config)
        serial = evaluate(model, tiny_samples, regions=True, threads=1)
        parallel = evaluate(model, tiny_samples, regions=True, threads=3)
        assert [p.predicted for p in serial.predictions] == [p.predicted for p in parallel.predictions]
        assert [p.sample_id for p in parallel.predictions] == ["t0", "t1", "t2", "t3"]

    def test_regions(self, tiny_config, tiny_samples):
        """Region counts add up to the whole-image counts"""
        model = build_model(tiny_config)
        report = evaluate(model, tiny_samples, regions=True)
        assert report.target is not None and report.nontarget is not None
        for p in report.predictions:
            assert p.target_predicted + p.nontarget_predicted == pytest.approx(p.predicted, abs=1e-9)
            assert p.target_ground_truth + p.nontarget_ground_truth == pytest.approx(p.ground_truth, abs=1e-6)

    def test_regions_use_shown_boxes(self, tiny_config, tiny_samples):
        """Points are expanded by the boxes of the exemplars the model actually saw"""
        sample = tiny_samples[0]
        boxes = [(0.0, 0.0, 3.0, 3.0)] + [(0.0, 0.0, 9.0, 9.0)] * (len(sample.boxes) - 1)
        sample = sample.model_copy(update={"boxes": boxes})
        record, density = predict_sample(build_model(with_shots(tiny_config, 1)), sample, regions=True)
        shown = region_eval(density, sample.density, region_masks(sample.points, [(3.0, 3.0)], sample.image_size))
        every = region_eval(density, sample.density, region_masks(sample.points, sample.box_sizes, sample.image_size))
        assert record.target_ground_truth == shown.target_ground_truth
        assert record.target_ground_truth < every.target_ground_truth

    def test_zero_shot_regions_use_all_boxes(self, tiny_config, tiny_samples):
        """Without exemplars the region split falls back to every stored box"""
        sample = tiny_samples[0]
        record, density = predict_sample(build_model(with_shots(tiny_config, 0)), sample, regions=True)
        every = region_eval(density, sample.density, region_masks(sample.points, sample.box_sizes, sample.image_size))
        assert record.target_ground_truth == every.target_ground_truth

    def test_dump_and_csv(self, tmp_path, tiny_config, tiny_samples):
        """Density dumps and the per-image CSV are written"""
        model = build_model(tiny_config)
        report = evaluate(model, tiny_samples[:2], dump_dir=tmp_path / "maps")
        assert (tmp_path / "maps" / "t0.mtnsr").exists()
        assert (tmp_path / "maps" / "t1.pgm").exists()
        write_predictions_csv(report, tmp_path / "pred.csv")
        with open(tmp_path / "pred.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["sample_id"] for r in rows] == ["t0", "t1"]
        assert rows[0]["target_predicted"] == ""

    def test_predict_sample(self, tiny_config, tiny_samples):
        """Per-image records carry the density sum and the GT count"""
        record, density = predict_sample(build_model(tiny_config), tiny_samples[2])
        assert record.predicted == pytest.approx(float(density.sum()))
        assert record.ground_truth == tiny_samples[2].count
        assert density.shape == (1, 32, 32)

    def test_empty(self, tiny_config):
        """Evaluating nothing raises DataError"""
        with pytest.raises(DataError):
            evaluate(build_model(tiny_config), [])


class TestAlignmentMaps:

    def test_maps(self, tiny_config, tiny_samples):
        """AS and exemplar mass lie in [0, 1] and sum to one per token"""
        maps = alignment_maps(build_model(tiny_config), tiny_samples[0])
        assert maps.alignment.shape == (4, 4)
        assert np.all((maps.alignment >= 0) & (maps.alignment <= 1))
        assert np.allclose(maps.alignment + maps.exemplar_mass, 1.0)

    def test_export(self, tmp_path, tiny_config, tiny_samples):
        """CSV and PGM files are written for both maps"""
        export_asmap(build_model(tiny_config), tiny_samples[0], tmp_path / "as")
        for name in ("asmap.csv", "asmap.pgm", "exemplar_mass.csv", "exemplar_mass.pgm"):
            assert (tmp_path / "as" / name).exists()
        grid = np.loadtxt(tmp_path / "as" / "asmap.csv", delimiter=",")
        assert grid.shape == (4, 4)

    def test_needs_background_token(self, tiny_config, tiny_samples):
        """Variants without the background token have no AS map"""
        config = tiny_config.with_changes(ablation=AblationVariant(mrm=True, bt=False, tbd=False))
        with pytest.raises(ConfigurationError):
            alignment_maps(build_model(config), tiny_samples[0])

    def test_needs_layers(self, tiny_config, tiny_samples):
        """L=0 has no attention and no AS map"""
        config = tiny_config.with_changes(**{"encoder.layers": 0})
        with pytest.raises(ConfigurationError):
            alignment_maps(build_model(config), tiny_samples[0])

    def test_region_alignment(self, tiny_config, tiny_samples):
        """Mean AS over target and background tokens are probabilities"""
        target, background = region_alignment(build_model(tiny_config), tiny_samples)
        assert 0.0 <= target <= 1.0
        assert 0.0 <= background <= 1.0


# ============================================================================
# SUITES
# ============================================================================

def _row(variant: str, seed: str, value: float) -> SuiteRow:
    return SuiteRow(variant=variant, seed=seed, mrm=1, bt=1, tbd=1, shots=3, **{c: value for c in METRIC_COLUMNS})


class TestSuites:

    def test_summary_rows(self):
        """Two seeds give mean, sample std and 1.96 std / sqrt(n)"""
        summary = summarize([_row("+TBD", "0", 1.0), _row("+TBD", "1", 3.0)])
        by_seed = {r.seed: r for r in summary}
        assert set(by_seed) == {"mean", "std", "ci95"}
        assert by_seed["mean"].all_mae == 2.0
        assert by_seed["std"].all_mae == pytest.approx(np.sqrt(2.0))
        assert by_seed["ci95"].all_mae == pytest.approx(1.96)

    def test_single_seed_summary(self):
        """One seed has zero spread"""
        summary = summarize([_row("baseline", "0", 4.0)])
        assert [r.seed for r in summary] == ["mean", "std", "ci95"]
        assert summary[1].nontarget_rmse == 0.0

    def test_with_shots(self, tiny_config):
        """0 shots switches to learnable tokens"""
        assert with_shots(tiny_config, 0).encoder.zero_shot
        assert with_shots(tiny_config, 2).encoder.shots == 2

    def test_ablation_table(self, tmp_path, tiny_config, tiny_spec):
        """Four variants plus their summary rows land in the CSV"""
        dataset = make_dataset(tiny_spec, tmp_path / "ds", 4, seed=1)
        rows = run_ablation_suite(tiny_config.with_changes(epochs=1), dataset, seeds=(0,), out_csv=tmp_path / "ab.csv")
        assert len(rows) == 16
        assert [r.variant for r in rows[:4]] == ["baseline", "+MRM", "+BT", "+TBD"]
        assert [(r.mrm, r.bt, r.tbd) for r in rows[:4]] == [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)]
        with open(tmp_path / "ab.csv", newline="") as f:
            reader = csv.DictReader(f)
            table = list(reader)
        assert reader.fieldnames == list(SuiteRow.model_fields)
        assert len(table) == 16

    def test_shots_table(self, tmp_path, tiny_config, tiny_spec):
        """Each shot count trains its own model"""
        dataset = make_dataset(tiny_spec, tmp_path / "ds", 3, seed=1)
        rows = run_shots_suite(tiny_config.with_changes(epochs=1), dataset, shots=(0, 1), seeds=(0,))
        assert [r.shots for r in rows[:2]] == [0, 1]
        assert [r.variant for r in rows[:2]] == ["0-shot", "1-shot"]
        assert len(rows) == 2 + 6
