import math

import numpy as np
import pytest

from polaramc.errors import DataError, InvalidArgumentError
from polaramc.harness import dataset as dataset_mod
from polaramc.harness.config import ExperimentConfig, load_config, parse_config_text, profile
from polaramc.harness.dataset import Dataset, generate_dataset, synthesize_frame, validation_split
from polaramc.harness.experiments import (
    SWEEP_HEADER,
    SweepResult,
    compare_convergence,
    convergence_table,
    nested_confusion_dominates,
    run_fading_experiment,
    run_sweep,
    write_confusion_csv,
    write_sweep_csv,
)
from polaramc.nn import EpochStats, TrainReport
from polaramc.nn.training import EvalResult


class TestConfig:
    def test_defaults_follow_reference_protocol(self):
        cfg = ExperimentConfig()
        assert cfg.frame_length == 1000
        assert (cfg.train_per_class, cfg.test_per_class) == (5000, 1000)
        assert cfg.snrs == (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
        assert len(cfg.scheme_list) == 4

    def test_desk_profile(self):
        cfg = profile("desk")
        assert (cfg.train_per_class, cfg.test_per_class) == (500, 200)
        assert (cfg.polar_resolution, cfg.iq_resolution) == (36, 64)
        with pytest.raises(InvalidArgumentError):
            profile("laptop")

    def test_parse_text(self):
        text = """
        # desk run with fading
        profile = desk
        fading = on
        snrs = 0, 8
        epochs = 3   # short
        schemes = QPSK,16qam
        """
        cfg = parse_config_text(text)
        assert cfg.fading and cfg.snrs == (0.0, 8.0) and cfg.epochs == 3
        assert cfg.train_per_class == 500
        assert [s.label for s in cfg.scheme_list] == ["QPSK", "16QAM"]

    @pytest.mark.parametrize("text", ["bogus = 1", "epochs", "epochs = many", "fading = maybe", "snrs =", "mode = fft"])
    def test_bad_text(self, text):
        with pytest.raises(InvalidArgumentError):
            parse_config_text(text)

    def test_to_text_round_trip(self, tmp_path):
        cfg = profile("desk").replace(fading=True, seed=7, snrs=(-4.0, 2.5))
        path = tmp_path / "c.cfg"
        path.write_text(cfg.to_text())
        assert load_config(path) == cfg

    def test_data_hash(self):
        base = profile("desk")
        assert base.data_hash() == profile("desk").data_hash()
        assert base.data_hash() != base.replace(seed=1).data_hash()
        # training knobs do not change the data
        assert base.data_hash() == base.replace(epochs=3, lr=0.01, mode="iq").data_hash()
        # fading range only matters when fading is on
        assert base.data_hash() == base.replace(a_min=0.7).data_hash()

    def test_invalid_counts(self):
        with pytest.raises(InvalidArgumentError):
            ExperimentConfig(train_per_class=0)
        with pytest.raises(InvalidArgumentError):
            ExperimentConfig(snrs=())


class TestDataset:
    def test_layout_and_counts(self, tiny_dataset, tiny_config):
        m = tiny_dataset.manifest
        assert m["counts"] == {"train": 4 * 2 * 10, "test": 4 * 2 * 5}
        assert m["image_shapes"] == {"polar": [36, 36], "iq": [64, 64]}
        assert m["config_hash"] == tiny_config.data_hash()
        tiny_dataset.verify_files()
        assert tiny_dataset.images("train", "polar").shape == (80, 36, 36)

    def test_awgn_sidecar_is_identity(self, tiny_dataset):
        ch = tiny_dataset.split("train").channel
        assert np.all(ch[:, 0] == 1.0) and np.all(ch[:, 1] == 0.0)
        assert sorted(set(ch[:, 2])) == [0.0, 10.0]

    def test_fading_sidecar(self, tiny_fading_dataset):
        _, ds = tiny_fading_dataset
        ch = ds.split("test").channel
        assert ch[:, 0].min() >= 0.5 and ch[:, 0].max() <= 2.0
        assert np.abs(ch[:, 1]).max() <= math.pi
        assert len(set(ch[:, 0])) == len(ch)

    def test_frames_independent_of_order(self, tiny_dataset, tiny_config):
        split = tiny_dataset.split("train")
        # row of (scheme 2, snr index 1, k 3)
        row = 2 * 2 * 10 + 1 * 10 + 3
        y, truth = synthesize_frame(tiny_config, 0, tiny_config.scheme_list[2], 1, 3)
        assert np.array_equal(split.frames[row], y.astype(np.complex64))
        assert split.labels[row] == 2 and truth[2] == 10.0

    def test_regeneration_bit_identical(self, tmp_path, tiny_config):
        a = generate_dataset(tiny_config, tmp_path / "a")
        b = generate_dataset(tiny_config, tmp_path / "b")
        assert (a.path / "manifest.json").read_bytes() == (b.path / "manifest.json").read_bytes()
        for name in a.manifest["files"]:
            assert (a.path / name).read_bytes() == (b.path / name).read_bytes()

    def test_image_modes_share_frames(self, tmp_path, tiny_config):
        polar_only = generate_dataset(tiny_config.replace(image_modes=("polar",)), tmp_path / "p")
        both = generate_dataset(tiny_config, tmp_path / "b")
        assert polar_only.manifest["frames_sha256"] == both.manifest["frames_sha256"]

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DataError, match="gen-data"):
            Dataset(tmp_path / "nope")

    def test_config_mismatch(self, tiny_dataset, tiny_config):
        with pytest.raises(DataError):
            tiny_dataset.check_config(tiny_config.replace(seed=99))

    def test_missing_image_mode(self, tmp_path, tiny_config):
        ds = generate_dataset(tiny_config.replace(image_modes=("polar",)), tmp_path / "p")
        with pytest.raises(DataError):
            ds.images("train", "iq")

    def test_checksum_detects_corruption(self, tmp_path, tiny_config):
        ds = generate_dataset(tiny_config, tmp_path / "c")
        with open(ds.path / "test_labels.npy", "r+b") as fh:
            fh.seek(-1, 2)
            fh.write(b"\x00")  # last label is 64QAM (3)
        with pytest.raises(DataError):
            ds.verify_files()

    def test_failure_leaves_no_partial_output(self, tmp_path, tiny_config, monkeypatch):
        def boom(*args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr(dataset_mod, "write_image_blob", boom)
        with pytest.raises(OSError):
            generate_dataset(tiny_config, tmp_path / "x")
        assert list(tmp_path.iterdir()) == []


class TestValidationSplit:
    def test_disjoint_and_sized(self):
        tr, va = validation_split(1000, 0.1, seed=0)
        assert len(va) == 100 and len(tr) == 900
        assert not set(tr) & set(va)
        assert np.array_equal(np.sort(np.concatenate([tr, va])), np.arange(1000))

    def test_seeded(self):
        assert np.array_equal(validation_split(50, 0.1, 3)[1], validation_split(50, 0.1, 3)[1])
        assert not np.array_equal(validation_split(50, 0.1, 3)[1], validation_split(50, 0.1, 4)[1])


def report_with(accs):
    r = TrainReport()
    for e, a in enumerate(accs, start=1):
        r.epochs.append(EpochStats(e, 1.0, a, a, 1.5))
    return r


class TestExperiments:
    def test_cumulant_sweep_needs_no_training(self, tiny_dataset, tiny_config, tmp_path):
        result, model = run_sweep(tiny_config, tiny_dataset, "cumulants")
        assert model is None and result.report is None
        assert len(result.results) == 2
        assert all(0 <= a <= 1 for a in result.accuracies)
        assert all(np.array_equal(r.confusion.sum(axis=1), [5, 5, 5, 5]) for r in result.results)
        write_sweep_csv([result], tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == ",".join(SWEEP_HEADER)
        assert [ln.split(",")[1] for ln in lines[1:]] == ["0", "10"]

    def test_polar_sweep(self, tiny_dataset, tiny_config, tmp_path):
        result, net = run_sweep(tiny_config, tiny_dataset, "polar")
        assert net is not None and len(result.report.epochs) == 2
        assert result.confusion(10.0).sum() == 20
        write_confusion_csv(result, tmp_path / "c.csv")
        assert len((tmp_path / "c.csv").read_text().splitlines()) == 1 + 2 * 16

    def test_compare_convergence_two_rows(self, tiny_dataset, tiny_config):
        rows, sweeps = compare_convergence(tiny_config, tiny_dataset)
        assert [r[0] for r in rows] == ["polar", "iq"]
        assert [s.mode for s in sweeps] == ["polar", "iq"]

    def test_convergence_table_not_reached(self):
        a = SweepResult("polar", [0.0], [EvalResult(np.eye(4, dtype=int))], report_with([0.5, 0.9, 0.95]))
        b = SweepResult("iq", [0.0], [EvalResult(np.eye(4, dtype=int))], report_with([0.5, 0.6, 0.7]))
        rows = convergence_table([a, b], 0.85, 3)
        assert rows[0][:4] == ["polar", 2, "3.000", "yes"]
        assert rows[1][:4] == ["iq", 3, "4.500", "not reached"]

    def test_fading_experiment_three_systems(self, tiny_fading_dataset):
        cfg, ds = tiny_fading_dataset
        sweeps, models = run_fading_experiment(cfg.replace(epochs=1), ds)
        assert [s.mode for s in sweeps] == ["iq-cnn", "polar-cnn", "polar-cnn+ccn"]
        totals = {tuple(r.confusion.sum(axis=1)) for s in sweeps for r in s.results}
        assert totals == {(5, 5, 5, 5)}
        run = models["polar-cnn+ccn"]
        assert len(run.delta_r) == 40 and np.all(run.delta_r > 0)

    def test_fading_experiment_requires_fading(self, tiny_dataset, tiny_config):
        with pytest.raises(InvalidArgumentError):
            run_fading_experiment(tiny_config, tiny_dataset)

    def test_spearman(self):
        res = SweepResult("polar", [0.0, 5.0, 10.0], [EvalResult(np.diag([k, 1, 1, 1]) + 1) for k in (1, 5, 9)])
        assert res.spearman() == pytest.approx(1.0)


class TestConfusionStructure:
    def test_nested_pairs_dominate(self):
        cm = np.array([[60, 30, 5, 5], [25, 65, 5, 5], [2, 3, 55, 40], [3, 2, 35, 60]])
        assert nested_confusion_dominates(cm)

    def test_cross_pair_confusion_fails(self):
        cm = np.array([[60, 5, 30, 5], [25, 65, 5, 5], [2, 3, 55, 40], [3, 2, 35, 60]])
        assert not nested_confusion_dominates(cm)

    def test_mostly_cross_pair_mass_fails(self):
        cm = np.array([[10, 10, 40, 40], [10, 10, 40, 40], [40, 40, 10, 10], [40, 40, 10, 10]])
        assert not nested_confusion_dominates(cm)
