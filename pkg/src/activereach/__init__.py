"""activereach: free-energy body perception and reaching control at desk scale."""

from .engine import (Attractor, BeliefState, GenerativeModel, HeadModel,
                     NumericError, Precisions, SensorFrame, StepInfo,
                     PIXEL_2D, STEREO_3D)
from .kinematics import (ConfigurationError, DHLink, KinematicChain,
                         RigidTransform, forward_kinematics, fk_position,
                         geometric_jacobian, joint_frames, pseudoinverse)
from .plant import MismatchSpec, NoiseSpec, Plant, PlantState, TargetSchedule
from .vision import CameraRig, IllConditionedError, PinholeCamera, project, triangulate

__version__ = "0.1.0"
