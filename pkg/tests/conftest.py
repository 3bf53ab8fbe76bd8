import numpy as np
import pytest

from anytimecv import fixtures
from anytimecv.data import target_input_shape, infer_meta
from anytimecv.metrics import nauc_macro

# criterion -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")


def pytest_collection_modifyitems(items):
    # cheap tests first, the long statistical runs last
    items.sort(key=lambda it: it.get_closest_marker("acceptance") is not None)


class StepClock:
    """Deterministic stand-in for a timer: every read advances by ``step``."""

    def __init__(self, step=0.5):
        self.step = step
        self.now = 0.0

    def __call__(self):
        self.now += self.step
        return self.now


@pytest.fixture
def step_clock():
    return StepClock


@pytest.fixture(scope="session")
def shapes_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("shapes")
    sums = fixtures.write_fixture(out, n_train=160, n_test=60, seed=3, size=12)
    return out, sums


@pytest.fixture(scope="session")
def separable():
    imgs, labels = fixtures.make_separable(64, seed=11, size=8)
    return fixtures.as_dataset(imgs, labels, name="sep")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def spec_for(ds):
    return target_input_shape(infer_meta(ds))


def valid_nauc(model, ds, tau=8.0):
    from anytimecv.data import preprocess
    from anytimecv.model import predict

    x = np.stack([preprocess(im, model.spec) for im in ds.images])
    return nauc_macro(predict(model, x, tau), ds.labels)


@pytest.fixture(scope="session")
def trained_separable(separable):
    """A small net fitted to the brightness task, plus the train/valid split."""
    from anytimecv.data import split_train_valid
    from anytimecv.trainer import TrainerConfig, init_model, initial_state, train_epoch, SGD

    train, valid = split_train_valid(separable, 0.25, seed=0)
    cfg = TrainerConfig(widths=(4,), batch_size=16, warmup_epochs=1, base_lr=0.05)
    model = init_model(spec_for(train), 2, cfg)
    state, opt = initial_state(cfg), SGD(cfg.momentum)
    for epoch in range(15):
        _, state = train_epoch(model, train, None, state, cfg,
                               np.random.default_rng([0, epoch]), opt)
    return model, train, valid, cfg
