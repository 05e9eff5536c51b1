import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

torch.set_num_threads(max(1, torch.get_num_threads()))

_CRITERIA: dict[int, tuple[str, str]] = {}
_NOTES: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, title = marker.args
    outcome = "PASS" if call.excinfo is None else "FAIL"
    # a criterion split over several tests passes only if all of them do
    if _CRITERIA.get(n, (title, "PASS"))[1] == "FAIL":
        outcome = "FAIL"
    _CRITERIA[n] = (title, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcome = _CRITERIA[n]
        notes = "; ".join(_NOTES.get(n, []))
        terminalreporter.write_line(f"criterion {n}: {outcome}  {title}" + (f"  ({notes})" if notes else ""))


@pytest.fixture
def note(request):
    """Attach a measured value to the summary line of the test's criterion."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        print(text)
        if marker is not None:
            _NOTES.setdefault(marker.args[0], []).append(text)

    return add


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    """The synthetic 3-attribute dataset rendered at 128 px."""
    from coogan.data import make_toy_dataset

    return make_toy_dataset(tmp_path_factory.mktemp("toy"), 2000, 128, n_attributes=3, seed=0)


@pytest.fixture(scope="session")
def toy_lr(toy_root):
    from coogan.data import load_dataset_dir

    return load_dataset_dir(toy_root, 64, paired_hr_size=128, seed=0)


@pytest.fixture(scope="session")
def toy_classifier(toy_lr):
    from coogan.evaluation import train_attr_classifier

    train, _ = toy_lr.split()
    return train_attr_classifier(train, steps=400, seed=0)


# toy recipe shared by the end-to-end and skip-trend checks
TOY_GLOBAL_TRAIN = dict(steps=2000, batch_size=16, n_critic=1, lr=5e-4, seed=0)
# the skip-count sweep trains longer so the plain models are past the early transient
TOY_TREND_STEPS = 6000
TOY_LOCAL_TRAIN = dict(steps=1500, batch_size=8, n_critic=1, lr=5e-4, seed=0, patches_per_image=4)


def toy_global_specs(skip_mode: str = "lstu", skip_count: int = 4):
    from coogan.networks import DiscriminatorSpec, GeneratorSpec

    g = GeneratorSpec(n_layers=5, base_channels=8, skip_mode=skip_mode, skip_count=skip_count, n_attributes=3)
    d = DiscriminatorSpec(n_layers=5, base_channels=8, n_attributes=3, input_size=64, fc_dim=64)
    return g, d


def train_toy_global(dataset, skip_mode: str = "lstu", skip_count: int = 4, steps: int | None = None):
    from coogan.training import TrainConfig, train_global

    train, _ = dataset.split()
    g, d = toy_global_specs(skip_mode, skip_count)
    recipe = dict(TOY_GLOBAL_TRAIN, steps=steps or TOY_GLOBAL_TRAIN["steps"])
    return train_global(train, g, d, TrainConfig(**recipe)).generator


@pytest.fixture(scope="session")
def toy_global(toy_lr):
    return train_toy_global(toy_lr)


@pytest.fixture(scope="session")
def toy_local_spec():
    from coogan.networks import DiscriminatorSpec, GeneratorSpec

    # per-patch instance statistics would differ between neighbouring patches, so no norm here
    g = GeneratorSpec(n_layers=4, base_channels=8, input_channels=6, skip_mode="lstu", skip_count=3,
                      n_attributes=3, norm="none")
    d = DiscriminatorSpec(n_layers=4, base_channels=8, n_attributes=3, input_size=32, fc_dim=64)
    return g, d


@pytest.fixture(scope="session")
def toy_local(toy_lr, toy_global, toy_local_spec):
    from coogan.losses import LossWeights
    from coogan.training import TrainConfig, train_local

    train, _ = toy_lr.split()
    cfg = TrainConfig(**TOY_LOCAL_TRAIN, loss_weights=LossWeights(lambda_cons=20.0))
    g, d = toy_local_spec
    return train_local(train, toy_global, g, d, cfg, patch_size=32, global_size=64).generator


@pytest.fixture(scope="session")
def toy_run_config():
    from coogan.core import RunConfig

    return RunConfig(global_size=64, patch_size=32, hr_size=128, n_attributes=3)
