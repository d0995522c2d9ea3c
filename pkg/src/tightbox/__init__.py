"""Tight oriented-box decomposition of tetrahedral meshes.

Pipeline: pre-segment masks and flood fill (``oversegment``), greedy
bounding-volume merging (``merge``), discrete box refinement (``refine``),
tree search (``mcts``) and metrics (``metrics``).
"""

from .coverage import CoverageCache, cov, soft_objective, tgt
from .errors import TightBoxError
from .merge import bavf, boxes_from_partition, merge_all
from .obb import Obb, fit_min_obb
from .oversegment import PreSegment, compute_masks, oversegment
from .refine import Action, BoxSet, apply_action, enumerate_actions, postprocess, refine_hard, refine_soft
from .mcts import MctsConfig, run_mcts, score
from .tetmesh import Partition, TetMesh, load_tetmesh

__version__ = "0.1.0"
