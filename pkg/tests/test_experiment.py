import numpy as np
import pytest

from lowprior import experiment
from lowprior.experiment import (
    EvalReport, ModelSpec, TrainConfig, evaluate, load_checkpoint, read_report, run_prior_reduction_study,
    run_sample_reduction_study, save_checkpoint, sweep_loss_weight, train, train_model, train_phase1,
    train_two_phase, write_run,
)
from lowprior.metrics import auroc
from lowprior.model import (EMB_BLOCKS, GPSR_BLOCKS, LSTM_BLOCKS, ArchitectureConfig, build_architecture,
                            predict_scores)
from lowprior.optim import AdamWState, OptimConfig, adamw_step

FAST = TrainConfig(batch_size=32, max_epochs=3, patience=2, seed=1, optim=OptimConfig(lr=3e-3))


def arch(cohort, kind="EvtGpsr", **kw):
    return ArchitectureConfig(kind=kind, d_in=cohort.d_in, hidden=6, embed=4, gpsr_output="softmax", **kw)


def test_train_is_deterministic(small_cohort):
    a = train(build_architecture(arch(small_cohort, dropout={"emb": 0.2}), small_cohort.layout, 2), small_cohort, FAST)
    b = train(build_architecture(arch(small_cohort, dropout={"emb": 0.2}), small_cohort.layout, 2), small_cohort, FAST)
    assert a[1] == b[1]
    assert all(np.array_equal(a[0].params[k], b[0].params[k]) for k in a[0].params)


def test_best_epoch_parameters_returned(small_cohort):
    net, hist = train(build_architecture(arch(small_cohort), small_cohort.layout, 0), small_cohort,
                      TrainConfig(max_epochs=5, patience=5, seed=0, optim=OptimConfig(lr=1e-2)))
    assert hist.valid_auroc[hist.best_epoch] == max(hist.valid_auroc)
    assert valid_of(net, small_cohort) == max(hist.valid_auroc)


def valid_of(net, cohort):
    return auroc(*predict_scores(net, [s for s in cohort.splits["valid"] if s.n_valid]))


def test_patience_one_with_decreasing_auroc(small_cohort, monkeypatch):
    values = iter([0.9, 0.8, 0.7, 0.6])
    snapshots = []
    monkeypatch.setattr(experiment, "valid_auroc",
                        lambda net, seqs: snapshots.append(net.params["target.a"].copy()) or next(values))
    net, hist = train(build_architecture(arch(small_cohort), small_cohort.layout, 0), small_cohort,
                      TrainConfig(max_epochs=10, patience=1, seed=0))
    assert len(hist.train_loss) == 2 and hist.best_epoch == 0
    assert "no improvement" in hist.stop_reason
    assert np.array_equal(net.params["target.a"], snapshots[0])


def test_loss_criterion_tolerance(small_cohort, monkeypatch):
    values = iter([1.0, 0.99995, 0.9, 0.89999, 0.89998])
    monkeypatch.setattr(experiment, "mean_loss", lambda net, seqs, p: next(values))
    _, hist = train(build_architecture(arch(small_cohort), small_cohort.layout, 0), small_cohort,
                    TrainConfig(max_epochs=10, patience=2, seed=0), p=0.0, criterion="loss")
    assert hist.best_epoch == 2 and len(hist.valid_loss) == 5


def test_single_class_valid_rejected(small_cohort):
    neg = [s.replace(labels=np.zeros_like(s.labels)) for s in small_cohort.splits["valid"]]
    with pytest.raises(ValueError, match="single-class"):
        train(build_architecture(arch(small_cohort), small_cohort.layout, 0), small_cohort.with_splits(valid=neg), FAST)


def test_embedding_phase2_freezes_everything_but_target(small_cohort):
    a = arch(small_cohort, "Embedding")
    phase1, _ = train_phase1(a, small_cohort, FAST)
    net, hists = train_two_phase(a, small_cohort, FAST, pretrained=phase1)
    assert set(hists) == {"phase2"}
    for k in LSTM_BLOCKS + EMB_BLOCKS + GPSR_BLOCKS:
        assert np.array_equal(net.params[k], phase1.params[k]), k
    assert not np.array_equal(net.params["target.a"], build_architecture(a, small_cohort.layout, 1).params["target.a"])


def test_residual_phase2_updates_emb_not_lstm(small_cohort):
    a = arch(small_cohort, "Residual")
    phase1, _ = train_phase1(a, small_cohort, FAST)
    net, _ = train_two_phase(a, small_cohort, FAST, pretrained=phase1)
    for k in LSTM_BLOCKS + GPSR_BLOCKS:
        assert np.array_equal(net.params[k], phase1.params[k]), k
    assert not np.array_equal(net.params["emb.W"], phase1.params["emb.W"])
    assert not np.array_equal(net.params["residual.W"], build_architecture(a, small_cohort.layout, 1).params["residual.W"])


def test_two_phase_rejects_other_kinds(small_cohort):
    with pytest.raises(ValueError):
        train_two_phase(arch(small_cohort, "Spv"), small_cohort, FAST)


def test_sweep_grid_and_tie_break(small_cohort, monkeypatch):
    res = sweep_loss_weight(arch(small_cohort), small_cohort, [1.0], FAST)
    spv, _ = train_model(ModelSpec("s", arch(small_cohort, "Spv"), 1.0), small_cohort, FAST)
    assert res.best_p == 1.0
    assert np.array_equal(predict_scores(res.networks[1.0], small_cohort.splits["test"])[0],
                          predict_scores(spv, small_cohort.splits["test"])[0])

    monkeypatch.setattr(experiment, "valid_auroc", lambda net, seqs: 0.7)
    assert sweep_loss_weight(arch(small_cohort), small_cohort, [0.2, 0.6, 0.4], FAST).best_p == 0.6
    with pytest.raises(ValueError):
        sweep_loss_weight(arch(small_cohort), small_cohort, [], FAST)
    with pytest.raises(ValueError):
        sweep_loss_weight(arch(small_cohort), small_cohort, [1.5], FAST)


def test_evaluate_zero_model_and_single_class(small_cohort):
    net = build_architecture(arch(small_cohort, "Spv"), small_cohort.layout, 0)
    for k in net.params:
        net.params[k][:] = 0
    rep = evaluate(net, small_cohort.splits["test"], model="zero")
    assert rep.auroc == 0.5 and abs(rep.auprc - rep.prior) < 1e-15
    neg = [s.replace(labels=np.zeros_like(s.labels)) for s in small_cohort.splits["test"]]
    rep = evaluate(net, neg)
    assert rep.auroc is None and "AUROC omitted" in rep.note


def test_report_and_checkpoint_roundtrip(small_cohort, tmp_path):
    net, hists = train_model(ModelSpec("m", arch(small_cohort), 0.8), small_cohort, FAST)
    rep = evaluate(net, small_cohort.splits["test"], model="m", p=0.8, study="x", fraction=0.6, iteration=2)
    write_run(tmp_path / "a", rep, net, hists)
    back = read_report(tmp_path / "a")
    assert back.to_dict() == rep.to_dict()
    assert np.array_equal(back.scores, rep.scores) and np.array_equal(back.labels, rep.labels)
    assert auroc(back.scores, back.labels) == rep.auroc

    state = AdamWState()
    grads = {k: np.ones_like(v) for k, v in net.params.items()}
    adamw_step(net.params, grads, state, OptimConfig())
    save_checkpoint(tmp_path / "c.zip", net, state, extra={"epoch": 3})
    net2, state2, extra = load_checkpoint(tmp_path / "c.zip")
    assert extra == {"epoch": 3} and state2.t == 1 and net2.config == net.config
    # resuming from the checkpoint continues bit-exactly
    adamw_step(net.params, grads, state, OptimConfig())
    adamw_step(net2.params, grads, state2, OptimConfig())
    assert all(np.array_equal(net.params[k], net2.params[k]) for k in net.params)


def test_prior_study_full_fraction_matches_unreduced(small_cohort):
    spec = ModelSpec("evt", arch(small_cohort), 0.8)
    reps = run_prior_reduction_study([spec], small_cohort, [1.0], FAST, iterations=1)
    net, _ = train_model(spec, small_cohort, FAST)
    base = evaluate(net, small_cohort.splits["test"])
    assert np.array_equal(reps[0].scores, base.scores)
    assert (reps[0].study, reps[0].fraction, reps[0].iteration) == ("prior", 1.0, 0)


def test_sample_study_pretrains_on_full_data(small_cohort, monkeypatch):
    sizes = []
    real = experiment.train_phase1

    def spy(a, cohort, config):
        sizes.append(len(cohort.splits["train"]))
        return real(a, cohort, config)

    monkeypatch.setattr(experiment, "train_phase1", spy)
    models = [ModelSpec("emb", arch(small_cohort, "Embedding")), ModelSpec("res", arch(small_cohort, "Residual"))]
    tc = TrainConfig(max_epochs=1, patience=1, seed=0)
    reps = run_sample_reduction_study(models, small_cohort, [0.5], tc, iterations=1)
    assert sizes == [len(small_cohort.splits["train"])]
    assert [r.model for r in reps] == ["emb", "res"]
    sizes.clear()
    run_prior_reduction_study(models, small_cohort, [0.5], tc, iterations=1)
    assert len(sizes) == 1


def test_parallel_workers_match_serial(small_cohort):
    models = [ModelSpec("spv", arch(small_cohort, "Spv")), ModelSpec("evt", arch(small_cohort), 0.8)]
    tc = TrainConfig(max_epochs=1, patience=1, seed=0)
    serial = run_prior_reduction_study(models, small_cohort, [0.6], tc, iterations=1, workers=1)
    para = run_prior_reduction_study(models, small_cohort, [0.6], tc, iterations=1, workers=2)
    for a, b in zip(serial, para):
        assert a.to_dict() == b.to_dict() and np.array_equal(a.scores, b.scores)


def test_train_config_validation():
    with pytest.raises(ValueError, match="patience"):
        TrainConfig(patience=0)
    with pytest.raises(ValueError, match="p:"):
        TrainConfig(p=1.2)
    assert TrainConfig(optim={"lr": 0.1}).optim.lr == 0.1
    assert EvalReport("m", "Spv", 1.0, 0).to_dict()["split"] == "test"
