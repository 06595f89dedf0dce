import json
from pathlib import Path

from typer.testing import CliRunner

from semid.adapters.cli import app
from semid.infra.repositories import MetricsLogRepo, SidTableRepo

from tests.synthetic import write_item_files

runner = CliRunner(mix_stderr=False)


def _ok(args):
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.stderr
    return json.loads(result.stdout)


def _train(tmp_path: Path, items: str, seqs: str, name: str = "enc.ckpt", epochs: int = 0) -> str:
    ckpt = str(tmp_path / name)
    _ok([
        "famae-train", "--items", items, "--sequences", seqs, "--out", ckpt,
        "--dim", "8", "--heads", "2", "--layers", "1", "--ffn", "16",
        "--epochs", str(epochs), "--batch", "16", "--seed", "5",
    ])
    return ckpt


def test_missing_required_option_is_a_usage_error():
    result = runner.invoke(app, ["prep", "--sequences", "seqs.tsv"])
    assert result.exit_code == 2


def test_unknown_config_key_exits_2(tmp_path: Path):
    cfg = tmp_path / "semid.toml"
    cfg.write_text("[quantize]\nbranchings = [4, 4]\n", encoding="utf-8")
    result = runner.invoke(app, ["cost", "--config", str(cfg)])
    assert result.exit_code == 2
    assert "unknown key" in result.stderr


def test_bad_branching_flag_exits_2(tmp_path: Path):
    result = runner.invoke(app, ["quantize", "--in", str(tmp_path / "e.rsid"), "--out", "x", "--branching", "4,1"])
    assert result.exit_code == 2


def test_cost_defaults():
    data = _ok(["cost"])
    assert data["flops"]["famae"] == 1_331_200


def test_cost_as_table():
    result = runner.invoke(app, ["cost", "--table"])
    assert result.exit_code == 0, result.stderr
    assert "flops.famae" in result.stdout


def test_prep_reports_counts(tmp_path: Path):
    items, seqs = write_item_files(tmp_path, users=5, length=6)
    data = _ok(["prep", "--items", items, "--sequences", seqs])
    assert data["items"] == 40
    assert data["vocab_sizes"] == [40, 4, 3]
    assert data["targets"] == 5 * 5


def test_prep_rejects_unknown_item(tmp_path: Path):
    items, _ = write_item_files(tmp_path)
    seqs = tmp_path / "bad.tsv"
    seqs.write_text("u1\ti1 i99\n", encoding="utf-8")
    result = runner.invoke(app, ["prep", "--items", items, "--sequences", str(seqs)])
    assert result.exit_code == 1
    assert "i99" in result.stderr


def test_pipeline_end_to_end(tmp_path: Path):
    items, seqs = write_item_files(tmp_path)
    ckpt = _train(tmp_path, items, seqs)
    assert Path(ckpt).exists()
    assert MetricsLogRepo(ckpt + ".metrics.jsonl").read() == []

    emb = str(tmp_path / "emb.rsid")
    extracted = _ok(["extract", "--checkpoint", ckpt, "--items", items, "--out", emb])
    assert extracted == {"rows": 40, "dim": 24, "out": emb}

    reports = {}
    for method in ("gaoq", "hkmeans"):
        sids = str(tmp_path / f"{method}.tsv")
        summary = _ok(["quantize", "--in", emb, "--out", sids, "--method", method, "--branching", "2,2",
                       "--iters", "10", "--codebook", str(tmp_path / f"{method}.json")])
        assert summary["method"] == method
        table = SidTableRepo(sids).load()
        assert len(set(table.tuples())) == 40

        pairs = str(tmp_path / f"{method}.pairs.tsv")
        prep = _ok(["prep", "--items", items, "--sequences", seqs, "--sids", sids, "--pairs", pairs])
        assert prep["pairs"] == 12 * 5

        reports[method] = _ok(["diagnose", "--sids", sids, "--emb", emb, "--corpus", pairs,
                               "--report", str(tmp_path / f"{method}.report.json")])

    g, h = reports["gaoq"], reports["hkmeans"]
    assert len(g["levels"]) == len(h["levels"]) == 3
    # level-1 codes come from the same balanced partition
    assert g["levels"][0]["H_marginal"] == h["levels"][0]["H_marginal"]
    assert g["pairs_used"] == 12 * 5


def test_famae_eval_reports_both_metrics(tmp_path: Path):
    items, seqs = write_item_files(tmp_path)
    ckpt = _train(tmp_path, items, seqs)
    data = _ok(["famae-eval", "--checkpoint", ckpt, "--items", items, "--sequences", seqs, "--k", "1,10"])
    for key in ("m1_recall@1", "m1_recall@10", "m2_ndcg@10"):
        assert 0.0 <= data[key] <= 1.0


def test_bad_magic_exits_1(tmp_path: Path):
    junk = tmp_path / "junk.rsid"
    junk.write_bytes(b"JUNK" + bytes(28))
    result = runner.invoke(app, ["quantize", "--in", str(junk), "--out", str(tmp_path / "s.tsv"), "--branching", "2"])
    assert result.exit_code == 1
    assert "bad magic" in result.stderr


def test_bound_check_exits_0():
    data = _ok(["bound-check", "--trials", "10", "--seed", "1"])
    assert data["holds"] is True


def test_run_log_file_receives_json_lines(tmp_path: Path):
    log_file = tmp_path / "run.log"
    cfg = tmp_path / "semid.toml"
    cfg.write_text(f'[run]\nlog_file = "{log_file.as_posix()}"\n', encoding="utf-8")
    _ok(["cost", "--config", str(cfg)])
    first = json.loads(log_file.read_text(encoding="utf-8").splitlines()[0])
    assert first["msg"] == "effective config"
    assert first["config"]["subcommand"] == "cost"


def test_equal_seeds_give_identical_files(tmp_path: Path):
    items, seqs = write_item_files(tmp_path)
    outputs = []
    for run in ("a", "b"):
        ckpt = _train(tmp_path, items, seqs, name=f"{run}.ckpt", epochs=1)
        emb = str(tmp_path / f"{run}.rsid")
        _ok(["extract", "--checkpoint", ckpt, "--items", items, "--out", emb])
        sids = tmp_path / f"{run}.tsv"
        _ok(["quantize", "--in", emb, "--out", str(sids), "--branching", "2,2", "--iters", "10",
             "--seed", "3", "--threads", "1"])
        outputs.append((Path(ckpt).read_bytes(), sids.read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
