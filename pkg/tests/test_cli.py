"""End-to-end command-line tests driving run() in process."""

import numpy as np
import pytest

from scantraj import cli
from scantraj import data as sd
from scantraj import training as tr
from scantraj.metrics import MetricReport

MICRO_CONFIG = """\
[model]
embed_dim = 3
hidden_dim = 4
obs_len = 3
pred_len = 2
bearing_bin_deg = 120.0
heading_bin_deg = 120.0
variant = vanilla

[train]
epochs = 2
batch_size = 4
lr = 0.01
seed = 3
"""

GAN_CONFIG = """\
[model]
embed_dim = 3
hidden_dim = 4
obs_len = 3
pred_len = 2
bearing_bin_deg = 120.0
heading_bin_deg = 120.0
variant = scan
generative = true
noise_dim = 3

[train]
epochs = 2
batch_size = 4
lr = 0.01
seed = 3

[gan]
k = 2
variety_weight = 1.0
diversity_weight = 0.5
"""


@pytest.fixture
def micro_config(tmp_path):
    path = tmp_path / "micro.cfg"
    path.write_text(MICRO_CONFIG)
    return str(path)


@pytest.fixture
def trained_ckpt(tmp_path, micro_config):
    ckpt = str(tmp_path / "model.ckpt")
    code = cli.run(["train", "--config", micro_config,
                    "--synth", "straight:4:1", "--out", ckpt])
    assert code == 0
    return ckpt


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        assert cli.run(["train", "--bogus", "x"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert cli.run(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_arguments(self, capsys):
        assert cli.run([]) == 1

    def test_help_exits_zero(self, capsys):
        assert cli.run(["--help"]) == 0
        out = capsys.readouterr().out
        for name in ("train", "evaluate", "predict", "sweep",
                     "inspect-domain", "synth"):
            assert name in out

    def test_subcommand_help_exits_zero(self, capsys):
        assert cli.run(["train", "--help"]) == 0
        assert "--out" in capsys.readouterr().out

    def test_malformed_set_flag(self, micro_config, tmp_path, capsys):
        code = cli.run(["train", "--config", micro_config,
                        "--synth", "straight:2:1", "--set", "epochs=5",
                        "--out", str(tmp_path / "x.ckpt")])
        assert code == 1
        assert "section.key=value" in capsys.readouterr().err

    def test_both_data_sources_rejected(self, micro_config, tmp_path):
        code = cli.run(["train", "--config", micro_config, "--data", "a.txt",
                        "--synth", "straight:2:1",
                        "--out", str(tmp_path / "x.ckpt")])
        assert code == 1

    def test_bad_synth_spec(self, micro_config, tmp_path):
        for spec in ("straight:2", "warp:2:1", "straight:two:1"):
            code = cli.run(["train", "--config", micro_config,
                            "--synth", spec,
                            "--out", str(tmp_path / "x.ckpt")])
            assert code == 1


class TestConfigHandling:
    def test_unknown_config_key_is_a_data_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[model]\nwarp_factor = 9\n")
        code = cli.run(["train", "--config", str(cfg),
                        "--synth", "straight:2:1",
                        "--out", str(tmp_path / "x.ckpt")])
        assert code == 2
        assert "warp_factor" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        code = cli.run(["train", "--config", str(tmp_path / "absent.cfg"),
                        "--synth", "straight:2:1",
                        "--out", str(tmp_path / "x.ckpt")])
        assert code == 2

    def test_set_overrides_win(self, tmp_path, micro_config):
        ckpt = str(tmp_path / "small.ckpt")
        code = cli.run(["train", "--config", micro_config,
                        "--synth", "straight:3:1", "--out", ckpt,
                        "--set", "train.epochs=1",
                        "--set", "model.hidden_dim=5"])
        assert code == 0
        state = tr.load_checkpoint(ckpt)
        assert state.epoch == 1
        assert state.cfg.hidden_dim == 5


class TestSynthCommand:
    def test_writes_loadable_records(self, tmp_path):
        out = tmp_path / "straight.txt"
        code = cli.run(["synth", "--kind", "straight", "--n", "3",
                        "--seed", "1", "--obs-len", "3", "--pred-len", "2",
                        "--out", str(out)])
        assert code == 0
        records = sd.load_dataset(out)
        windows = sd.make_windows(records, obs_len=3, pred_len=2)
        # stride-1 re-windowing adds tail-masked offcuts around scene gaps;
        # the fully observed windows are the three original scenes
        assert len([w for w in windows if w.mask.all()]) == 3

    def test_unknown_kind_rejected(self, tmp_path):
        code = cli.run(["synth", "--kind", "teleport", "--out",
                        str(tmp_path / "x.txt")])
        assert code == 1


class TestTrainCommand:
    def test_happy_path_writes_checkpoint_and_curve(self, tmp_path,
                                                    micro_config, capsys):
        ckpt = str(tmp_path / "model.ckpt")
        code = cli.run(["train", "--config", micro_config,
                        "--synth", "straight:4:1", "--out", ckpt])
        assert code == 0
        out = capsys.readouterr().out
        assert "checkpoint" in out
        state = tr.load_checkpoint(ckpt)
        assert state.epoch == 2
        curve = tr.read_curve(tmp_path / "model_curve.csv")
        assert [e for (e, t, _) in curve if t == "train_loss"] == [0, 1]

    def test_out_path_in_a_fresh_directory_is_created(self, tmp_path,
                                                      micro_config):
        ckpt = str(tmp_path / "runs" / "a" / "model.ckpt")
        code = cli.run(["train", "--config", micro_config,
                        "--synth", "straight:4:1", "--out", ckpt])
        assert code == 0
        assert tr.load_checkpoint(ckpt).epoch == 2
        assert (tmp_path / "runs" / "a" / "model_curve.csv").exists()

    def test_out_path_through_a_file_fails_before_training(self, tmp_path,
                                                           micro_config,
                                                           capsys):
        (tmp_path / "blocker").write_text("")
        ckpt = str(tmp_path / "blocker" / "model.ckpt")
        code = cli.run(["train", "--config", micro_config,
                        "--synth", "straight:4:1", "--out", ckpt])
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_gan_training_round_trips(self, tmp_path):
        cfg = tmp_path / "gan.cfg"
        cfg.write_text(GAN_CONFIG)
        ckpt = str(tmp_path / "gan.ckpt")
        code = cli.run(["train", "--config", str(cfg),
                        "--synth", "head_on:3:2", "--out", ckpt])
        assert code == 0
        state = tr.load_checkpoint(ckpt)
        assert state.disc_params is not None
        curve = tr.read_curve(tmp_path / "gan_curve.csv")
        assert {"disc", "adversarial", "variety", "diversity", "total"} == \
            {t for (_, t, _) in curve}

    def test_gan_section_requires_generative_model(self, tmp_path,
                                                   micro_config, capsys):
        code = cli.run(["train", "--config", micro_config,
                        "--synth", "straight:2:1", "--set", "gan.k=2",
                        "--out", str(tmp_path / "x.ckpt")])
        assert code == 2
        assert "generative" in capsys.readouterr().err

    def test_resume_continues_to_target_epochs(self, tmp_path, micro_config):
        first = str(tmp_path / "first.ckpt")
        assert cli.run(["train", "--config", micro_config,
                        "--synth", "straight:4:1", "--out", first,
                        "--set", "train.epochs=1"]) == 0
        final = str(tmp_path / "final.ckpt")
        assert cli.run(["train", "--config", micro_config,
                        "--synth", "straight:4:1", "--resume", first,
                        "--out", final]) == 0
        assert tr.load_checkpoint(final).epoch == 2

    def test_divergence_exits_3(self, tmp_path, micro_config, capsys):
        seed_ckpt = str(tmp_path / "seed.ckpt")
        assert cli.run(["train", "--config", micro_config,
                        "--synth", "straight:2:1", "--out", seed_ckpt,
                        "--set", "train.epochs=1"]) == 0
        state = tr.load_checkpoint(seed_ckpt)
        state.params["out.W"].values[:] = 1e300
        broken = str(tmp_path / "broken.ckpt")
        tr.save_checkpoint(broken, state)
        with np.errstate(over="ignore", invalid="ignore"):
            code = cli.run(["train", "--config", micro_config,
                            "--synth", "straight:2:1", "--resume", broken,
                            "--out", str(tmp_path / "y.ckpt")])
        assert code == 3
        assert "numeric" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code = cli.run(["evaluate", "--ckpt", str(tmp_path / "nope.ckpt"),
                        "--synth", "straight:2:1"])
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_report_on_stdout_and_file(self, tmp_path, trained_ckpt, capsys):
        out = tmp_path / "report.csv"
        code = cli.run(["evaluate", "--ckpt", trained_ckpt,
                        "--synth", "straight:3:7", "--out", str(out)])
        assert code == 0
        text = capsys.readouterr().out
        report = MetricReport.from_csv(text)
        assert report.n_scenes == 3
        assert out.read_text() == text

    def test_k_on_deterministic_checkpoint_exits_1(self, trained_ckpt,
                                                   capsys):
        code = cli.run(["evaluate", "--ckpt", trained_ckpt,
                        "--synth", "straight:2:7", "--k", "5"])
        assert code == 1
        assert "generative" in capsys.readouterr().err

    def test_relative_data_resolves_under_env_root(self, tmp_path,
                                                   trained_ckpt, monkeypatch):
        assert cli.run(["synth", "--kind", "straight", "--n", "2",
                        "--seed", "3", "--obs-len", "3", "--pred-len", "2",
                        "--out", str(tmp_path / "rows.txt")]) == 0
        monkeypatch.setenv(cli.DATA_ROOT_ENV, str(tmp_path))
        code = cli.run(["evaluate", "--ckpt", trained_ckpt,
                        "--data", "rows.txt"])
        assert code == 0


class TestPredictCommand:
    def test_emits_figures(self, tmp_path, trained_ckpt, capsys):
        out_dir = tmp_path / "figs"
        code = cli.run(["predict", "--ckpt", trained_ckpt,
                        "--synth", "straight:2:7", "--out", str(out_dir),
                        "--scenes", "1"])
        assert code == 0
        assert (out_dir / "trajectories_000.svg").exists()
        assert (out_dir / "trajectories_000.csv").exists()
        assert (out_dir / "domain_grid.csv").exists()
        listed = capsys.readouterr().out.strip().split("\n")
        assert str(out_dir / "domain_grid.csv") in listed

    def test_generative_checkpoint_emits_diversity_grid(self, tmp_path):
        cfg = tmp_path / "gan.cfg"
        cfg.write_text(GAN_CONFIG)
        ckpt = str(tmp_path / "gan.ckpt")
        assert cli.run(["train", "--config", str(cfg),
                        "--synth", "head_on:2:2", "--out", ckpt]) == 0
        out_dir = tmp_path / "figs"
        code = cli.run(["predict", "--ckpt", ckpt,
                        "--synth", "head_on:1:5", "--out", str(out_dir),
                        "--k", "4", "--gan-lambda", "0.5"])
        assert code == 0
        grid_csv = (out_dir / "diversity_grid.csv").read_text()
        assert "4V-0.5" in grid_csv


class TestSweepCommand:
    def test_three_horizons(self, tmp_path, trained_ckpt, capsys):
        out = tmp_path / "sweep.csv"
        code = cli.run(["sweep", "--ckpt", trained_ckpt,
                        "--synth", "straight:3:7", "--pred-lens", "1,2,4",
                        "--out", str(out)])
        assert code == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].startswith("pred_len,ade,fde")
        assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "4"]
        assert out.read_text().strip().split("\n") == lines

    def test_bad_pred_lens_exits_1(self, trained_ckpt):
        assert cli.run(["sweep", "--ckpt", trained_ckpt,
                        "--synth", "straight:2:7",
                        "--pred-lens", "8,twelve"]) == 1


class TestInspectDomainCommand:
    def test_exports_grid(self, tmp_path, trained_ckpt, capsys):
        out_dir = tmp_path / "domain"
        code = cli.run(["inspect-domain", "--ckpt", trained_ckpt,
                        "--out", str(out_dir)])
        assert code == 0
        lines = (out_dir / "domain_grid.csv").read_text().strip().split("\n")
        assert len(lines) == 3 and len(lines[0].split(",")) == 3
        assert "bearing" in capsys.readouterr().out

    def test_disc_grid_missing_exits_2(self, trained_ckpt, tmp_path):
        code = cli.run(["inspect-domain", "--ckpt", trained_ckpt,
                        "--out", str(tmp_path / "d"), "--which", "disc"])
        assert code == 2
