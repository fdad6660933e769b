import pytest

from btss.config import ConfigError, RunConfig, load_config, parse_config_text


def test_parse_and_coerce(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# gaze\nline_tol = 25.5\nk = 4  # fewer styles\nfilter = no\nseed = 7\n")
    cfg = load_config(str(f))
    assert (cfg.line_tol, cfg.k, cfg.filter, cfg.seed) == (25.5, 4, False, 7)


@pytest.mark.parametrize("text, msg", [
    ("colour = red", "unknown"),
    ("k = 3\nk = 4", "duplicate"),
    ("k 3", "expected key"),
    ("k = three", "bad value"),
    ("filter = maybe", "bad value"),
])
def test_bad_config_text(text, msg):
    with pytest.raises(ConfigError, match=msg):
        RunConfig().update(parse_config_text(text))


def test_overrides_win_and_none_is_ignored(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("k = 4\nseed = 1\n")
    cfg = load_config(str(f), {"k": 6, "seed": None})
    assert (cfg.k, cfg.seed) == (6, 1)


def test_seed_fallback(monkeypatch):
    monkeypatch.delenv("BTSS_SEED", raising=False)
    assert RunConfig().effective_seed() == 0
    monkeypatch.setenv("BTSS_SEED", "42")
    assert RunConfig().effective_seed() == 42
    assert RunConfig(seed=3).effective_seed() == 3
    monkeypatch.setenv("BTSS_SEED", "x")
    with pytest.raises(ConfigError):
        RunConfig().effective_seed()


def test_hash_ignores_paths_only(monkeypatch):
    monkeypatch.delenv("BTSS_SEED", raising=False)
    a = RunConfig(input="a", output="b").hash()
    assert a == RunConfig(input="c", output="d").hash()
    assert a != RunConfig(theta_o=0.61).hash()
    assert RunConfig(seed=0).hash() == RunConfig().hash()
