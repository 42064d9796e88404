import csv
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from patchaug.cli import main
from patchaug.config import ExperimentConfig, dump_config, load_config, parse_config
from patchaug.errors import ConfigError
from patchaug.metrics import relative_increase
from patchaug.pipeline import STAGES, MetricsReport, StageError, cmd_experiment, emit_report, read_report, stage_seed

TINY_CFG = """\
seed = 3
data.synthetic.n_per_class = 12
data.synthetic.height = 8
data.synthetic.width = 8
gan.steps = 4
gan.batch_size = 8
gan.latent_dim = 4
gan.base_channels = 2
gan.d_widths = 2,2
classifier.epochs = 1
classifier.widths = 2,2
classifier.hidden = 4
fid.features = raw
"""


def report(**kw):
    base = dict(
        fid=35.495, fid_class0=30.0, fid_class1=None, fid_feature_mode="raw",
        baseline_accuracy=80.0, augmented_accuracy=87.0, augmentation_ratio=0.5,
        relative_increase=relative_increase(80.0, 87.0), size_f_o=7613, size_f_a=11420,
        seed=1, classifier_seed=2, gan_seed_class0=3, gan_seed_class1=4,
        started_at="1970-01-01T00:00:00Z", finished_at="1970-01-01T00:00:00Z",
    )
    return MetricsReport(**{**base, **kw})


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == ExperimentConfig()
        assert cfg.augment_ratio == 0.5

    def test_values_and_comments(self):
        cfg = parse_config("# run\nseed = 9  # trailing\ngan.d_widths = 8, 4\nsplit.stratified = false\n")
        assert cfg.seed == 9
        assert cfg.gan.d_widths == (8, 4)
        assert cfg.split.stratified is False

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("seed 3", "x.cfg:1"),
            ("\nbogus = 1", "x.cfg:2: unknown key 'bogus'"),
            ("seed = 1\nseed = 2", "already set on line 1"),
            ("gan.steps = many", "gan.steps"),
            ("gan.loss = wasserstein", "gan.loss"),
            ("split.train_fraction = 0.9", "sum to 1"),
            ("gan.batch_size = 0", "batch_size"),
        ],
    )
    def test_errors_name_the_problem(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(text, "x.cfg")

    def test_dump_round_trip(self, tmp_path):
        cfg = parse_config(TINY_CFG)
        (tmp_path / "c.cfg").write_text(dump_config(cfg))
        assert load_config(tmp_path / "c.cfg") == cfg

    def test_overrides(self):
        cfg = ExperimentConfig().with_overrides(seed=5, out_dir="x")
        assert (cfg.seed, cfg.out_dir) == (5, "x")


class TestReport:
    def test_round_trip(self, tmp_path):
        r = report()
        emit_report(r, tmp_path / "new" / "dir")
        assert read_report(tmp_path / "new" / "dir" / "report.csv") == r

    def test_table_arithmetic_and_format(self, tmp_path):
        emit_report(report(), tmp_path)
        with open(tmp_path / "report.csv", newline="") as fh:
            header, row = list(csv.reader(fh))
        assert header == list(MetricsReport.__dataclass_fields__)
        values = dict(zip(header, row))
        assert values["baseline_accuracy"] == "80.00"
        assert values["augmented_accuracy"] == "87.00"
        assert float(values["relative_increase"]) == 8.75
        assert values["fid_class1"] == ""
        assert b"\r" not in (tmp_path / "report.csv").read_bytes()
        assert "87.00%" in (tmp_path / "report.txt").read_text()


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = parse_config(TINY_CFG).with_overrides(out_dir=str(out))
    return cfg, cmd_experiment(cfg, deterministic=True), out


class TestPipeline:
    def test_artifacts(self, tiny_run):
        _, r, out = tiny_run
        for name in (
            "report.csv", "report.txt", "stages.log", "fid.csv", "f_o_manifest.csv", "f_a_manifest.csv",
            "classifier_baseline.galc", "classifier_augmented.galc", "gan_class0_generator.galc",
            "gan_class1_discriminator.galc", "gan_class1_log.csv", "classifier_baseline_curve.csv",
        ):
            assert (out / name).is_file(), name
        assert (out / "stages.log").read_text().splitlines() == [f"{i} {s} ok" for i, s in enumerate(STAGES, 1)]

    def test_report_consistency(self, tiny_run):
        cfg, r, out = tiny_run
        assert read_report(out / "report.csv") == r
        assert r.relative_increase == relative_increase(r.baseline_accuracy, r.augmented_accuracy)
        assert (r.size_f_o, r.size_f_a) == (20, 30)
        assert r.classifier_seed == stage_seed(cfg.seed, "classifier")
        assert r.started_at == "1970-01-01T00:00:00Z"

    def test_ratio_zero_trains_on_identical_multisets(self, tmp_path):
        cfg = replace(parse_config(TINY_CFG), augment_ratio=0.0, out_dir=str(tmp_path))
        r = cmd_experiment(cfg, deterministic=True)
        fo = (tmp_path / "f_o_manifest.csv").read_text().splitlines()
        fa = (tmp_path / "f_a_manifest.csv").read_text().splitlines()
        assert Counter(fo) == Counter(fa)
        assert r.size_f_o == r.size_f_a
        # same data, same seed: same classifier
        assert (tmp_path / "classifier_baseline.galc").read_bytes() == (tmp_path / "classifier_augmented.galc").read_bytes()
        assert r.baseline_accuracy == r.augmented_accuracy

    def test_failed_stage_is_named_and_prior_artifacts_kept(self, tmp_path):
        cfg = replace(parse_config(TINY_CFG), data_root=str(tmp_path / "missing"), out_dir=str(tmp_path / "o"))
        with pytest.raises(StageError) as info:
            cmd_experiment(cfg)
        assert info.value.stage == "data"
        assert (tmp_path / "o" / "stages.log").read_text().startswith("1 data FAILED")

    def test_gan_failure_leaves_earlier_artifacts(self, tmp_path):
        cfg = parse_config(TINY_CFG).with_overrides(out_dir=str(tmp_path))
        cfg = replace(cfg, gan=replace(cfg.gan, lr=float("inf")))
        with pytest.raises(StageError) as info:
            cmd_experiment(cfg)
        assert info.value.stage == "gan"
        assert (tmp_path / "classifier_baseline.galc").is_file()
        assert (tmp_path / "stages.log").read_text().splitlines()[-1].startswith("4 gan FAILED")


class TestCli:
    @pytest.fixture()
    def cfg_path(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(TINY_CFG)
        return p

    def test_experiment_prints_summary(self, cfg_path, tmp_path, capsys):
        assert main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path / "e"), "--deterministic"]) == 0
        assert "Original Convolutional Network Accuracy" in capsys.readouterr().out

    def test_seed_flag_overrides(self, cfg_path, tmp_path):
        assert main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path / "s"), "--seed", "11"]) == 0
        assert read_report(tmp_path / "s" / "report.csv").seed == 11

    def test_stage_commands(self, cfg_path, tmp_path, capsys):
        c = ["--config", str(cfg_path)]
        assert main(["synth-data", *c, "--out", str(tmp_path / "d")]) == 0
        assert (tmp_path / "d" / "1" / "patch_00011.png").is_file()
        assert main(["train-gan", *c, "--out", str(tmp_path / "g")]) == 0
        assert main(["train-classifier", *c, "--out", str(tmp_path / "c")]) == 0
        gen1 = str(tmp_path / "g" / "gan_class1_generator.galc")
        assert main(["fid", *c, "--generator", gen1, "--label", "1"]) == 0
        gens = ["--generator", f"0={tmp_path / 'g' / 'gan_class0_generator.galc'}", "--generator", f"1={gen1}"]
        assert main(["augment", *c, *gens, "--out", str(tmp_path / "a")]) == 0
        assert "|F_a| = 30" in capsys.readouterr().out

    def test_exit_codes(self, cfg_path, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nope = 1\n")
        assert main(["experiment", "--config", str(bad)]) == 2
        assert main(["experiment", "--config", str(tmp_path / "absent.cfg")]) == 2
        data = tmp_path / "data.cfg"
        data.write_text(f"data.root = {tmp_path / 'nothing'}\n")
        assert main(["experiment", "--config", str(data), "--out", str(tmp_path / "x")]) == 3
        assert main(["fid", "--config", str(cfg_path), "--generator", str(tmp_path / "no.galc"), "--label", "0"]) == 5
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["experiment", "--config", str(cfg_path), "--out", str(blocker / "sub")]) == 5

    def test_numeric_exit_code(self, tmp_path):
        p = tmp_path / "inf.cfg"
        p.write_text(TINY_CFG + "gan.lr = inf\n")
        assert main(["experiment", "--config", str(p), "--out", str(tmp_path / "n")]) == 4

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["experiment", "--seed", "x"])
        assert info.value.code == 2
