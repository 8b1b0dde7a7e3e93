import numpy as np
import pytest

from pednav.calib import CalibrationModel, CameraPlacement
from pednav.matcher import build_model
from pednav.synth import MarkerSpec, ScenePose, render_marker

SCENE_PX_PER_CM = 10.8
MODEL_BUILD_CENTER = (32.0, 32.0)


@pytest.fixture(scope="session")
def marker_spec():
    return MarkerSpec()


@pytest.fixture(scope="session")
def marker_image(marker_spec):
    """Noise-free marker render at the scene scale, used to build models."""
    return render_marker(
        marker_spec,
        ScenePose(center=MODEL_BUILD_CENTER, angle=0.0, px_per_cm=SCENE_PX_PER_CM),
        size=(64, 64),
    )


@pytest.fixture(scope="session")
def model(marker_image):
    return build_model(marker_image)


@pytest.fixture(scope="session")
def model_offset(marker_image):
    """Measured offset from the marker render center to the model origin (the
    edgel centroid), in pixels at the scene scale. The rendering oracle adds
    the rotated offset to a pose center to predict a match centroid."""
    from pednav.edgemap import edge_map

    emap = edge_map(marker_image)
    return emap.chain_positions().mean(axis=0) - np.array(MODEL_BUILD_CENTER)


@pytest.fixture(scope="session")
def scale_calib():
    """Pure-scale calibration at the scene scale (one px/cm ratio sample)."""
    placement = CameraPlacement(v=56.0, h=77.0)
    return CalibrationModel.from_samples([SCENE_PX_PER_CM], placement)


def expected_centroid(pose_center, angle_deg, offset):
    a = np.radians(angle_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return np.asarray(pose_center) + rot @ offset


def angle_diff(a, b):
    return abs((a - b + 180.0) % 360.0 - 180.0)
