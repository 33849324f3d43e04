import pytest

from udsim import Connection, World, load_default_config


@pytest.fixture
def cfg():
    return load_default_config()


@pytest.fixture
def world(cfg):
    return World(cfg)


@pytest.fixture
def conn(world):
    return Connection(world)
