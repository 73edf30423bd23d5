"""Poses, primitive scenes, rendering and hand kinematics."""

from .hand import (GripperModel, HandModel, HandState, Joint, default_gripper, default_hand,
                   forward_kinematics, hand_from_dict, load_hand, penetration_depth, save_hand)
from .scene import (TABLE_LABEL, EmptyCloudError, Scene, SceneCloud, SceneFormatError, SceneObject,
                    load_scene, look_at, render_depth_cloud, resting_pose, save_scene,
                    scene_from_dict, scene_to_dict, signed_distance)
from .shapes import PrimitiveShape, sample_surface
from .transforms import (DegenerateInputError, RigidPose, axis_angle, farthest_point_sample,
                         geodesic_angle, random_rotation, rot_z, svd_project)
