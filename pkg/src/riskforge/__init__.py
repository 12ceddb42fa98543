"""riskforge: high-risk motion synthesis, labeling, rendering, and evaluation."""

__version__ = "0.1.0"

from .scene import Scene, Trajectory, Vec2, load_scene, load_scene_path  # noqa: F401
from .synth import BoundaryConditions, PolyTraj2, ScenarioKind, solve_quintic_bvp  # noqa: F401
from .rules import RiskLabel, kinematic_profile, label, plausibility_check  # noqa: F401
from .config import OverlayStyle, RuleConfig, RunConfig, SynthConfig  # noqa: F401
