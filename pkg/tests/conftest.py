import numpy as np
import pytest

from semsplat.scene import Camera, Scene, SceneSpec, generate_scene
from semsplat.views import build_view_packets, orbit_cameras


@pytest.fixture
def small_scene():
    return generate_scene(SceneSpec(2, 2, 2, 4, seed=11))


@pytest.fixture
def small_packets(small_scene):
    cams = orbit_cameras(2, width=32, height=32, focal=48.0, radius=8.8,
                         elevation_deg=55.0)
    return build_view_packets(small_scene, cams)


@pytest.fixture
def head_on_camera():
    return Camera.look_at(position=(0.0, 0.0, -2.0), target=(0.0, 0.0, 0.0),
                          focal=100.0, width=64, height=64, up_hint=(0.0, 1.0, 0.0))


def make_scene(positions, opacities, scales, features, labels):
    return Scene(positions=np.array(positions, dtype=float),
                 opacities=np.array(opacities, dtype=float),
                 scales=np.array(scales, dtype=float),
                 features=np.array(features, dtype=float),
                 labels=np.array(labels, dtype=np.int64))
