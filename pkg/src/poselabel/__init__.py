"""Label multi-view RGB-D gripper recordings with 6-DoF poses and actions.

The pipeline: backproject every depth view into a world-frame point cloud,
merge the views, isolate the distinctly-colored end-effector, register the
gripper model cloud against the segment (RANSAC for the first frame, ICP
seeded from the previous pose afterwards), and shift the resulting pose
track forward one step to obtain per-frame action labels.
"""

__version__ = "0.1.0"
