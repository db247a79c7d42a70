from fadechan import config


def test_get_settings_uses_env(monkeypatch):
    monkeypatch.setenv("FADECHAN_THREADS", "3")
    monkeypatch.setenv("FADECHAN_OUTPUT_DIR", "/tmp/runs")
    monkeypatch.setenv("FADECHAN_QMC_REPLICATES", "4")
    monkeypatch.setenv("FADECHAN_LOG_LEVEL", "debug")

    config.get_settings.cache_clear()
    settings = config.get_settings()

    assert settings.threads == 3
    assert settings.worker_count == 3
    assert settings.output_dir == "/tmp/runs"
    assert settings.qmc_replicates == 4
    assert settings.log_level == "DEBUG"

    # Ensure caching returns same object
    assert config.get_settings() is settings


def test_defaults_without_env():
    settings = config.get_settings()

    assert settings.threads == 0
    assert settings.worker_count >= 1
    assert settings.output_dir == "out"
    assert settings.quad_budget == 1_000_000
    assert settings.qmc_points_low == 200_000
    assert settings.qmc_points_high == 2_000_000
    assert settings.shard_size == 65_536


def test_empty_values_fall_back_to_defaults(monkeypatch):
    monkeypatch.setenv("FADECHAN_SHARD_SIZE", "")
    config.get_settings.cache_clear()

    assert config.get_settings().shard_size == 65_536


def test_log_file_switch_and_retention(monkeypatch):
    assert config.get_settings().log_file is True
    assert config.get_settings().log_keep == 5

    monkeypatch.setenv("FADECHAN_LOG_FILE", "off")
    monkeypatch.setenv("FADECHAN_LOG_KEEP", "2")
    config.get_settings.cache_clear()
    settings = config.get_settings()

    assert settings.log_file is False
    assert settings.log_keep == 2
