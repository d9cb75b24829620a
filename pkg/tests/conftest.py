import pytest

from ssmamba.data import SyntheticSpec, make_synthetic, save_hsic


@pytest.fixture(scope="session")
def small_scene_path(tmp_path_factory):
    """An 18x18 clean 3-class scene on disk, small enough for fast CLI runs."""
    spec = SyntheticSpec(mode="separable", classes=3, cell=9, grid=2, bands=16,
                         noise=0.0, seed=11)
    cube = make_synthetic(spec)
    path = tmp_path_factory.mktemp("scenes") / "small.hsic"
    save_hsic(cube, path)
    return str(path)


FAST_OVERRIDES = [
    "window=9", "p_spa=3", "p_spe=2", "d=8", "d_prime=4", "l_blocks=1",
    "n_state=4", "k_conv=4", "lr0=5e-3", "epochs=2", "batch_size=64",
    "train_per_class=10", "seed=0",
]


def fast_args(*extra):
    out = []
    for item in FAST_OVERRIDES + list(extra):
        out += ["--set", item]
    return out
