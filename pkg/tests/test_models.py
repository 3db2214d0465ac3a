"""Tests for the core data types."""

import numpy as np
import pytest

from face_relief.errors import DimensionMismatchError, InputError
from face_relief.models import (
    CameraIntrinsics,
    FaceMesh,
    HeightField,
    NormalMap,
    PointLight,
    Pose,
    RadianceImage,
    VisibilitySets,
)


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(InputError):
        CameraIntrinsics(0.0, 100.0, 10.0, 10.0, 20, 20)
    with pytest.raises(InputError):
        CameraIntrinsics(100.0, 100.0, 25.0, 10.0, 20, 20)
    cam = CameraIntrinsics(100.0, 90.0, 9.5, 9.5, 20, 20)
    assert CameraIntrinsics.from_dict(cam.to_dict()) == cam
    np.testing.assert_allclose(cam.matrix, [[100.0, 0.0, 9.5], [0.0, 90.0, 9.5], [0.0, 0.0, 1.0]])


def test_pose_dict_round_trip():
    pose = Pose(0.1, -0.2, 0.3, np.array([1.0, 2.0, 3.0]))
    again = Pose.from_dict(pose.to_dict())
    np.testing.assert_allclose(again.rotation, pose.rotation)
    np.testing.assert_allclose(again.translation, pose.translation)


def test_pose_translation_must_be_a_3_vector():
    with pytest.raises(DimensionMismatchError):
        Pose(translation=np.zeros(2))


def test_light_illumination_must_be_positive():
    with pytest.raises(InputError):
        PointLight(np.zeros(3), 0.0)
    light = PointLight(np.array([1.0, 2.0, 3.0]), 4.0)
    assert light.scaled(0.5).illumination == 2.0
    assert light.to_dict() == {"position": [1.0, 2.0, 3.0], "beta": 4.0}


def test_face_mesh_validates_and_freezes(plane):
    mesh = plane(n=3)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 1.0
    with pytest.raises(InputError):
        FaceMesh(mesh.vertices, mesh.triangles + 100, mesh.albedo)
    with pytest.raises(InputError):
        FaceMesh(mesh.vertices, mesh.triangles, mesh.albedo + 1.0)
    with pytest.raises(DimensionMismatchError):
        FaceMesh(mesh.vertices, mesh.triangles, mesh.albedo[:2])


def test_radiance_image_rejects_negative_values():
    with pytest.raises(InputError):
        RadianceImage(-np.ones((2, 2, 3)), np.ones((2, 2), dtype=bool))
    with pytest.raises(DimensionMismatchError):
        RadianceImage(np.ones((2, 2, 3)), np.ones((3, 2), dtype=bool))


def test_normal_map_requires_unit_normals_on_mask():
    mask = np.array([[True, False]])
    NormalMap(np.array([[[0.0, 0.0, -1.0], [0.0, 0.0, 0.0]]]), mask)
    with pytest.raises(InputError):
        NormalMap(np.array([[[0.0, 0.0, -2.0], [0.0, 0.0, 0.0]]]), mask)


def test_normal_map_requires_camera_facing_normals_on_mask():
    mask = np.array([[True, False]])
    away = np.array([[[0.0, 0.6, 0.8], [0.0, 0.0, 1.0]]])
    with pytest.raises(InputError, match="z >= 0"):
        NormalMap(away, mask)
    with pytest.raises(InputError):
        NormalMap(np.array([[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]]), mask)
    # Off-mask entries are not checked; direction fields may opt out.
    NormalMap(np.array([[[0.0, 0.6, -0.8], [0.0, 0.0, 1.0]]]), mask)
    field = NormalMap(away, mask, camera_facing=False)
    assert field.camera_facing is False


def test_height_field_zeroes_outside_mask(camera):
    depth = np.full((camera.height, camera.width), 7.0)
    mask = np.zeros(depth.shape, dtype=bool)
    mask[0, 0] = True
    field = HeightField(depth, mask, camera)
    assert field.depth.sum() == 7.0
    with pytest.raises(InputError):
        HeightField(np.where(mask, -1.0, 0.0), mask, camera)
    with pytest.raises(DimensionMismatchError):
        HeightField(depth[:2], mask[:2], camera)


def test_visibility_sets_members():
    sets = VisibilitySets(np.array([[True, False, True], [False, False, False]]))
    assert sets.n_lights == 3
    assert sets.sets() == [{0, 2}, set()]
