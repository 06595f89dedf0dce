import json
import logging

import pytest

from semid.config import build_run_config, read_config_file
from semid.errors import ConfigError
from semid.infra.logs import JsonLinesFormatter, setup_logging


def _write(tmp_path, text):
    path = tmp_path / "semid.toml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults():
    cfg = build_run_config("famae-train")
    assert cfg.famae.dim == 128
    assert cfg.famae.layers == 2
    assert cfg.famae.heads == 4
    assert cfg.famae.max_len == 32
    assert cfg.famae.negatives == 128
    assert cfg.quantize.method == "gaoq"
    assert cfg.run.threads == 1


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = _write(tmp_path, "[famae]\ndim = 64\nheads = 2\nlr = 0.01\n")
    cfg = build_run_config("famae-train", path, {"famae": {"dim": 32, "lr": None}})
    assert cfg.famae.dim == 32       # flag
    assert cfg.famae.heads == 2      # file
    assert cfg.famae.lr == 0.01      # file, flag not given
    assert cfg.famae.layers == 2     # default


def test_unknown_key_is_rejected(tmp_path):
    path = _write(tmp_path, "[famae]\ndimension = 64\n")
    with pytest.raises(ConfigError, match="unknown key"):
        build_run_config("famae-train", path)


def test_unknown_section_is_rejected(tmp_path):
    path = _write(tmp_path, "[training]\nepochs = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        read_config_file(path)


def test_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(_write(tmp_path, "[famae\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        build_run_config("cost", str(tmp_path / "nope.toml"))


@pytest.mark.parametrize(
    "section,values",
    [
        ("famae", {"dim": 10, "heads": 4}),
        ("famae", {"dropout": 1.0}),
        ("famae", {"max_len": 1}),
        ("quantize", {"method": "pq"}),
        ("quantize", {"branching": [8, 1]}),
        ("quantize", {"branching": [8, 8], "anchors": [8, 4]}),
        ("run", {"threads": 0}),
    ],
)
def test_invalid_values(section, values):
    with pytest.raises(ConfigError):
        build_run_config("x", None, {section: values})


def test_config_error_is_a_value_error():
    assert issubclass(ConfigError, ValueError)


def test_json_lines_formatter_merges_data():
    record = logging.LogRecord("semid.test", logging.INFO, __file__, 1, "epoch", None, None)
    record.data = {"epoch": 3, "loss": 1.25}
    out = json.loads(JsonLinesFormatter().format(record))
    assert out["msg"] == "epoch"
    assert out["level"] == "INFO"
    assert out["logger"] == "semid.test"
    assert out["epoch"] == 3 and out["loss"] == 1.25
    assert "ts" in out


def test_setup_logging_writes_file(tmp_path):
    log_path = tmp_path / "run.log"
    logger = setup_logging("DEBUG", str(log_path))
    logging.getLogger("semid.usecases.example").debug("hello", extra={"data": {"k": 1}})
    for h in logger.handlers:
        h.flush()
    line = json.loads(log_path.read_text(encoding="utf-8").splitlines()[-1])
    assert line["msg"] == "hello"
    assert line["k"] == 1


def test_setup_logging_rejects_unknown_level():
    with pytest.raises(ConfigError):
        setup_logging("LOUD")
