import pytest
import torch

from semid.adapters.tsv_loader import load_items, load_sequences
from semid.config import FamaeDefaults
from semid.domain.famae import build_encoder, evaluate_metrics, parameter_snapshot, split_examples
from semid.errors import FormatError, TrainingDiverged
from semid.infra.repositories import CheckpointRepo, MetricsLogRepo
from semid.usecases.train_famae import load_checkpoint, model_config_from, save_last_good, train_famae

from tests.synthetic import write_item_files, write_lines


def _small(**kw) -> FamaeDefaults:
    base = dict(dim=16, layers=1, heads=2, ffn=32, dropout=0.0, lr=1e-2, batch=32,
                epochs=2, patience=50, max_len=8, eval_k=5, seed=7)
    base.update(kw)
    return FamaeDefaults(**base)


def test_zero_epochs_writes_an_empty_log(tmp_path):
    items_path, seqs_path = write_item_files(tmp_path)
    items = load_items(items_path)
    store = load_sequences(seqs_path, items, max_len=8)
    repo = MetricsLogRepo(str(tmp_path / "m.jsonl"))
    _, result = train_famae(items, store, _small(epochs=0), repo)
    assert repo.read() == []
    assert result.epochs_run == 0
    assert result.best_epoch is None


@pytest.mark.slow
def test_same_seed_same_metrics_log(tmp_path):
    items_path, seqs_path = write_item_files(tmp_path)
    items = load_items(items_path)
    store = load_sequences(seqs_path, items, max_len=8)
    logs = []
    for run in ("a", "b"):
        repo = MetricsLogRepo(str(tmp_path / f"{run}.jsonl"))
        train_famae(items, store, _small(epochs=2), repo)
        logs.append((tmp_path / f"{run}.jsonl").read_text(encoding="utf-8"))
    assert logs[0] == logs[1]
    assert len(logs[0].splitlines()) == 2


@pytest.mark.slow
def test_learns_to_repeat_the_previous_item(tmp_path):
    n = 30
    items_path = write_lines(tmp_path / "items.tsv", [f"i{i}\tcat{i % 5}" for i in range(n)])
    seqs_path = write_lines(tmp_path / "seqs.tsv", [f"u{i}\ti{i} i{i} i{i}" for i in range(n)])
    items = load_items(items_path)
    store = load_sequences(seqs_path, items, max_len=8)
    defaults = _small(epochs=40)
    _, valid = split_examples(list(store.iter_examples()))

    untrained = evaluate_metrics(build_encoder(items.schema.vocab_sizes, model_config_from(defaults)),
                                 valid, items, [5])
    encoder, result = train_famae(items, store, defaults, MetricsLogRepo(str(tmp_path / "m.jsonl")))
    trained = evaluate_metrics(encoder, valid, items, [5])

    assert result.epochs_run >= 1
    assert trained["m1_recall@5"] > untrained["m1_recall@5"]
    assert trained["m1_recall@5"] >= 0.5


def _load(tmp_path):
    items_path, seqs_path = write_item_files(tmp_path)
    items = load_items(items_path)
    return items, load_sequences(seqs_path, items, max_len=8)


def test_early_stop_after_patience_stale_epochs(tmp_path, monkeypatch):
    items, store = _load(tmp_path)
    scores = iter([0.5, 0.4, 0.3, 0.2, 0.1, 0.0])

    def falling(encoder, examples, items, ks):
        score = next(scores)
        return {f"m1_recall@{k}": score for k in ks}

    monkeypatch.setattr("semid.usecases.train_famae.evaluate_metrics", falling)
    repo = MetricsLogRepo(str(tmp_path / "m.jsonl"))
    _, result = train_famae(items, store, _small(epochs=6, patience=3), repo)
    assert result.epochs_run == 4
    assert result.best_epoch == 1
    assert result.best_metric == 0.5
    assert [r["epoch"] for r in repo.read()] == [1, 2, 3, 4]


def test_zero_learning_rate_leaves_parameters_unchanged(tmp_path):
    items, store = _load(tmp_path)
    defaults = _small(epochs=2, lr=0.0)
    encoder, result = train_famae(items, store, defaults, MetricsLogRepo(str(tmp_path / "m.jsonl")))
    fresh = build_encoder(items.schema.vocab_sizes, model_config_from(defaults))
    assert result.epochs_run == 2
    for name, value in fresh.state_dict().items():
        assert torch.equal(encoder.state_dict()[name], value), name


def test_last_good_snapshot_is_a_loadable_checkpoint(tmp_path):
    items, _ = _load(tmp_path)
    defaults = _small()
    enc = build_encoder(items.schema.vocab_sizes, model_config_from(defaults))
    exc = TrainingDiverged("non-finite loss", window=4, last_good_state=parameter_snapshot(enc), epoch=3)
    path = str(tmp_path / "enc.ckpt.last-good")
    save_last_good(path, exc, defaults, items.schema)

    loaded, schema = load_checkpoint(path)
    assert schema.field_names == items.schema.field_names
    for name, value in enc.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], value), name
    assert CheckpointRepo(path).load()[1]["diverged_at_epoch"] == 3


def test_checkpoint_without_config_is_a_format_error(tmp_path):
    items, _ = _load(tmp_path)
    enc = build_encoder(items.schema.vocab_sizes, model_config_from(_small()))
    path = str(tmp_path / "bare.ckpt")
    CheckpointRepo(path).save(enc.state_dict(), {"schema": {"field_names": ["item_id"]}})
    with pytest.raises(FormatError):
        load_checkpoint(path)


@pytest.mark.slow
def test_fields_that_identify_the_item_are_learned(tmp_path):
    # (cat, brand) pins down the item, so both metrics should get close to the copy task
    n = 500
    items_path = write_lines(tmp_path / "items.tsv",
                             [f"i{i}\tcat{i % 25}\tbrand{i // 25}" for i in range(n)])
    seqs_path = write_lines(tmp_path / "seqs.tsv", [f"u{i}\ti{i} i{i} i{i} i{i}" for i in range(n)])
    items = load_items(items_path)
    store = load_sequences(seqs_path, items, max_len=8)
    defaults = _small(dim=32, ffn=64, lr=5e-3, batch=64, epochs=40, eval_k=10)
    _, valid = split_examples(list(store.iter_examples()))

    encoder, _ = train_famae(items, store, defaults, MetricsLogRepo(str(tmp_path / "m.jsonl")))
    trained = evaluate_metrics(encoder, valid, items, [10])

    assert trained["m1_recall@10"] >= 0.8
    assert trained["m2_recall@10"] >= 0.8
