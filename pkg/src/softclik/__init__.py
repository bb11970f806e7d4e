"""Closed-loop inverse kinematics on continuous soft-robot shapes."""

from .cc_model import CcModel, CcParams, cc_jacobian, cc_shape
from .clik import ClikConfig, Trajectory, clik_step, export_trajectory, run_clik
from .core import Box, Centerline, GainMatrix, evaluate_centerline, resample
from .neuralop import OperatorNet, operator_eval, operator_grad_qa
from .rod_model import RodParams, solve_bvp
from .tasks import TaskSpec, closest_point, composed_jacobian, task_value

__version__ = "0.1.0"
