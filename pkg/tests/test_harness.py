import numpy as np
import pytest
import torch
from PIL import Image

from helpers import make_synthetic_dataset

from mffn.config import build_train_config, parse_config_file
from mffn.data import DatasetSpec, iter_batches, list_pairs, load_dataset, split_train_val
from mffn.errors import (
    CheckpointMismatch,
    EmptyDataset,
    InsufficientHistory,
    MissingMask,
)
from mffn.metrics import MetricReport
from mffn.model import (
    ModelConfig,
    MffnNet,
    build_model,
    count_parameters,
    load_model,
    save_model,
)
from mffn.train import (
    EvalHistory,
    TrainConfig,
    lr_at,
    predict,
    predict_array,
    should_stop,
    tiny_train_config,
    train,
)
from mffn.views import ViewKind


def report(s=0.8, fw=0.7, m=0.05, f=0.75, e=0.85):
    return MetricReport(s_measure=s, f_beta_weighted=fw, mae=m, f_beta=f, e_measure=e)


class TestDataset:
    def test_single_pair(self, tmp_path):
        root = make_synthetic_dataset(tmp_path / "one", n=1, size=64)
        ds = load_dataset(DatasetSpec(root), 64)
        assert len(ds) == 1
        img, mask = ds[0]
        assert img.shape == (3, 64, 64) and mask.shape == (1, 64, 64)
        assert set(torch.unique(mask).tolist()) <= {0.0, 1.0}

    def test_mask_binarization_at_128(self, tmp_path):
        root = tmp_path / "gray"
        (root / "Images").mkdir(parents=True)
        (root / "GT").mkdir(parents=True)
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(root / "Images" / "a.png")
        gray = np.zeros((8, 8), np.uint8)
        gray[0] = 200
        gray[1] = 255
        gray[2] = 127
        Image.fromarray(gray, mode="L").save(root / "GT" / "a.png")
        _, mask = load_dataset(DatasetSpec(root), 8)[0]
        assert torch.all(mask[0, 0] == 1.0)
        assert torch.all(mask[0, 1] == 1.0)
        assert torch.all(mask[0, 2] == 0.0)
        assert torch.all(mask[0, 3:] == 0.0)

    def test_missing_mask(self, tmp_path):
        root = make_synthetic_dataset(tmp_path / "m", n=2, size=32)
        (root / "GT" / "img_01.png").unlink()
        with pytest.raises(MissingMask):
            list_pairs(DatasetSpec(root))

    def test_empty_dataset(self, tmp_path):
        root = tmp_path / "empty"
        (root / "Images").mkdir(parents=True)
        (root / "GT").mkdir(parents=True)
        with pytest.raises(EmptyDataset):
            list_pairs(DatasetSpec(root))
        with pytest.raises(EmptyDataset):
            list_pairs(DatasetSpec(tmp_path / "nowhere"))

    def test_deterministic_order_and_split(self, tmp_path):
        root = make_synthetic_dataset(tmp_path / "d", n=10, size=32)
        a = [p[0].name for p in list_pairs(DatasetSpec(root))]
        b = [p[0].name for p in list_pairs(DatasetSpec(root))]
        assert a == b == sorted(a)
        ds = load_dataset(DatasetSpec(root), 32)
        tr1, va1 = split_train_val(ds, 0.2, seed=7)
        tr2, va2 = split_train_val(ds, 0.2, seed=7)
        assert [p[0] for p in tr1.pairs] == [p[0] for p in tr2.pairs]
        assert len(va1) == 2 and len(tr1) == 8
        assert not set(p[0] for p in tr1.pairs) & set(p[0] for p in va1.pairs)

    def test_batch_iteration(self, tmp_path):
        root = make_synthetic_dataset(tmp_path / "b", n=5, size=32)
        ds = load_dataset(DatasetSpec(root), 32)
        batches = list(iter_batches(ds, 2))
        assert [b[0].shape[0] for b in batches] == [2, 2, 1]


class TestLrSchedule:
    CFG = TrainConfig(model=ModelConfig.tiny(), epochs=40, warmup_epochs=3, lr=0.01)

    def test_warmup_and_peak(self):
        assert lr_at(0, self.CFG) <= 0.01
        assert abs(lr_at(2, self.CFG) - 0.01) < 1e-12  # end of 3-epoch warmup
        assert abs(lr_at(3, self.CFG) - 0.01) < 1e-12  # cosine starts at the peak

    def test_monotone_decay_to_zero(self):
        vals = [lr_at(e, self.CFG) for e in range(3, 40)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-4

    def test_no_warmup(self):
        cfg = TrainConfig(model=ModelConfig.tiny(), epochs=10, warmup_epochs=0, lr=0.01)
        assert abs(lr_at(0, cfg) - 0.01) < 1e-12


class TestEarlyStopping:
    def test_needs_two_entries(self):
        history = EvalHistory([(1, report())])
        with pytest.raises(InsufficientHistory):
            should_stop(history)

    def test_strictly_increasing_epochs(self):
        history = EvalHistory([(1, report())])
        with pytest.raises(ValueError):
            history.append(1, report())

    def test_all_improving_continues(self):
        history = EvalHistory([
            (1, report(0.5, 0.4, 0.2, 0.45, 0.6)),
            (4, report(0.6, 0.5, 0.1, 0.55, 0.7)),
        ])
        assert should_stop(history) is False

    def test_two_of_five_improving_stops(self):
        # only s_measure and e_measure improve: 3 of 5 failed -> stop
        history = EvalHistory([
            (1, report(0.5, 0.5, 0.10, 0.50, 0.60)),
            (4, report(0.6, 0.5, 0.10, 0.49, 0.70)),
        ])
        assert should_stop(history) is True

    def test_equal_values_do_not_count_as_improvement(self):
        history = EvalHistory([(1, report()), (4, report())])
        assert should_stop(history) is True

    def test_best_mode_compares_running_best(self):
        history = EvalHistory([
            (1, report(0.7, 0.6, 0.05, 0.6, 0.8)),
            (4, report(0.5, 0.4, 0.20, 0.4, 0.6)),
            (7, report(0.65, 0.55, 0.06, 0.55, 0.75)),
        ])
        # vs previous (weak epoch 4) everything improves
        assert should_stop(history, compare="previous") is False
        # vs best (epoch 1) nothing improves
        assert should_stop(history, compare="best") is True

    def test_scripted_run_stops_at_43_keeps_40(self):
        """Evaluations every 3 epochs starting at 1; quality climbs until
        epoch 40, then the epoch-43 evaluation fails on 3 of 5 measures."""
        history = EvalHistory()
        stop_epoch = None
        base = dict(s=0.70, fw=0.60, m=0.060, f=0.65, e=0.80)
        for epoch in range(1, 44, 3):
            k = (epoch - 1) // 3
            if epoch < 43:
                rep = report(
                    s=base["s"] + 0.011 * k,
                    fw=base["fw"] + 0.010 * k,
                    m=base["m"] - 0.002 * k,
                    f=base["f"] + 0.009 * k,
                    e=base["e"] + 0.008 * k,
                )
            else:
                prev = history.entries[-1][1]
                rep = report(
                    s=prev.s_measure - 0.001,      # worse
                    fw=prev.f_beta_weighted + 0.001,
                    m=prev.mae + 0.001,            # worse
                    f=prev.f_beta - 0.001,         # worse
                    e=prev.e_measure + 0.001,
                )
            history.append(epoch, rep)
            if len(history) >= 2 and should_stop(history):
                stop_epoch = epoch
                break
        assert stop_epoch == 43
        assert history.best_epoch() == 40


class TestCheckpointRoundTrip:
    def test_bitwise_state_and_forward(self, tmp_path):
        model = build_model("tiny")
        model.eval()
        x = torch.rand(1, 3, 96, 96)
        with torch.no_grad():
            before = model(x)
        path = save_model(tmp_path / "ckpt", model, {"epoch": 7})
        loaded, meta = load_model(path)
        assert meta["epoch"] == 7
        loaded.eval()
        for (ka, va), (kb, vb) in zip(
            model.state_dict().items(), loaded.state_dict().items()
        ):
            assert ka == kb and torch.equal(va, vb)
        with torch.no_grad():
            after = loaded(x)
        assert torch.equal(before, after)

    def test_mismatched_architecture_rejected(self, tmp_path):
        model = build_model("tiny")
        path = save_model(tmp_path / "ckpt", model)
        import json

        mpath = tmp_path / "ckpt.manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["meta"]["model_config"]["cfu_enabled"] = False
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(CheckpointMismatch):
            load_model(path)


class TestTrainLoop:
    def test_smoke_run_and_determinism(self, synth_root, tmp_path):
        ds = None
        losses = []
        for run in range(2):
            cfg = tiny_train_config(max_steps=6, eval_every=50, seed=11)
            result = train(cfg, DatasetSpec(synth_root), out_dir=tmp_path / f"run{run}")
            assert result.steps == 6
            assert result.best_checkpoint.with_suffix(".npz").exists() or (
                result.best_checkpoint.parent / (result.best_checkpoint.name + ".npz")
            ).exists()
            losses.append(result.losses)
        assert losses[0] == losses[1]

    def test_single_view_baseline_runs(self, synth_root, tmp_path):
        cfg = tiny_train_config(
            views=[ViewKind.original()], max_steps=2, eval_every=50, seed=0
        )
        result = train(cfg, DatasetSpec(synth_root), out_dir=tmp_path / "vo")
        assert result.steps == 2
        assert len(result.history) >= 1

    def test_history_written(self, synth_root, tmp_path):
        cfg = tiny_train_config(max_steps=4, eval_every=50, seed=5)
        train(cfg, DatasetSpec(synth_root), out_dir=tmp_path / "h")
        assert (tmp_path / "h" / "history.json").exists()


class TestPredict:
    def test_png_contract(self, tmp_path):
        model = build_model("tiny")
        path = save_model(tmp_path / "ckpt", model)
        src = (np.random.rand(80, 100, 3) * 255).astype(np.uint8)
        img_path = tmp_path / "photo.png"
        Image.fromarray(src).save(img_path)
        out_path = tmp_path / "pred.png"
        probs = predict(path, img_path, out_path)
        assert probs.shape == (80, 100)
        with Image.open(out_path) as png:
            assert png.size == (100, 80)  # PIL size is (W, H)
            arr = np.asarray(png)
        assert arr.dtype == np.uint8
        assert arr.min() >= 0 and arr.max() <= 255

    def test_predict_array_matches_written_png(self, tmp_path):
        model = build_model("tiny")
        img = np.random.rand(96, 96, 3).astype(np.float32)
        probs = predict_array(model, img)
        assert probs.shape == (96, 96)
        assert probs.min() >= 0.0 and probs.max() <= 1.0


class TestParameterCounts:
    def test_tiny_below_full(self):
        tiny = build_model("tiny")
        full = build_model("full")
        assert count_parameters(tiny) < count_parameters(full)

    def test_freeze_backbone_subtracts_exactly(self):
        model = build_model("tiny")
        total = count_parameters(model)
        backbone = sum(p.numel() for p in model.encoder.backbone.parameters())
        model.freeze_backbone()
        assert count_parameters(model) == total - backbone


class TestConfigFile:
    def test_parse_and_build(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            """
            # training setup
            epochs = 12
            batch_size = 4
            lr = 0.02
            views = original,dflip,close:2.0
            cfu_enabled = false
            max_steps = none
            """
        )
        values = parse_config_file(cfg_file)
        cfg = build_train_config("tiny", values, seed=9)
        assert cfg.epochs == 12
        assert cfg.batch_size == 4
        assert cfg.lr == 0.02
        assert cfg.seed == 9
        assert cfg.model.cfu_enabled is False
        assert [k.kind for k in cfg.model.views] == ["original", "dflip", "close"]

    def test_overrides_beat_file(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("epochs = 12\n")
        cfg = build_train_config("tiny", parse_config_file(cfg_file), epochs=3)
        assert cfg.epochs == 3

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            build_train_config("tiny", {"not_a_key": "1"})

    def test_bad_line(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("epochs 12\n")
        with pytest.raises(ValueError):
            parse_config_file(cfg_file)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(model=ModelConfig.tiny(), batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(model=ModelConfig.tiny(), eval_every=0)
        with pytest.raises(ValueError):
            build_train_config("huge")
