import os


def _env_flag(name, default='false'):
    return os.environ.get(name, default).lower() in ('1', 'true', 'yes')


class Config:
    """Settings shared by every environment; values come from the process environment."""
    ENV_NAME = 'desk'
    DEBUG = _env_flag('UCK_DEBUG')
    TESTING = False

    # Where commands put their outputs and where log files go
    OUTPUT_ROOT = os.environ.get('UCK_OUTPUT_ROOT', 'runs')
    LOG_DIR = os.environ.get('UCK_LOG_DIR', 'logs')
    LOG_LEVEL = os.environ.get('UCK_LOG_LEVEL')
    LOG_TO_FILES = True

    # Dataset sizes per split and default training length
    TRAIN_COUNT = 2000
    TEST_COUNT = 500
    GEN_COUNT = 500
    EPOCHS = 15
    SEEDS = [0, 1, 2]

    # Generation worker processes (results do not depend on this)
    WORKERS = int(os.environ.get('UCK_WORKERS', 1))


class DeskConfig(Config):
    """Laptop-scale runs used for day-to-day work and acceptance checks"""
    ENV_NAME = 'desk'


class FullScaleConfig(Config):
    """Full-scale runs with the published dataset sizes and training length"""
    ENV_NAME = 'full'
    TRAIN_COUNT = 10000
    TEST_COUNT = 2000
    GEN_COUNT = 2000
    EPOCHS = 30
    SEEDS = [0, 1, 2, 3, 4]


class TestingConfig(Config):
    """Testing-specific configuration"""
    ENV_NAME = 'testing'
    TESTING = True
    LOG_TO_FILES = False
    TRAIN_COUNT = 40
    TEST_COUNT = 20
    GEN_COUNT = 20
    EPOCHS = 2
    SEEDS = [0]


CONFIG_MAP = {
    'desk': DeskConfig,
    'full': FullScaleConfig,
    'testing': TestingConfig,
}


def get_config(env=None):
    """
    Get configuration for an environment name, defaulting to UCK_ENV.

    Raises:
        ValueError: If the name is not one of desk, full or testing.
    """
    env = (env or os.environ.get('UCK_ENV', 'desk')).lower()
    if env not in CONFIG_MAP:
        raise ValueError(f"Unknown UCK_ENV '{env}' (expected one of {', '.join(CONFIG_MAP)})")
    return CONFIG_MAP[env]
