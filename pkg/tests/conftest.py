import pytest

from mgmap.world import Footprint, Scene, SceneObject, generate_scene, sample_episodes


def box_scene(size=10.0, walls=(), objects=(), scene_id="box"):
    """Square room (outer walls included) with optional interior walls and objects."""
    outer = [(0.0, 0.0, size, 0.0), (size, 0.0, size, size), (size, size, 0.0, size), (0.0, size, 0.0, 0.0)]
    return Scene(scene_id, (0.0, 0.0, size, size), tuple(outer) + tuple(walls), tuple(objects))


def disc(x, y, r, cat=1, attrs=(1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)):
    return SceneObject((x, y), Footprint("disc", (r,)), cat, attrs)


@pytest.fixture(scope="session")
def scene0():
    return generate_scene(0)


@pytest.fixture(scope="session")
def episodes0(scene0):
    return sample_episodes(scene0, 6, seed=0)


CRITERIA: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}"
    CRITERIA[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
