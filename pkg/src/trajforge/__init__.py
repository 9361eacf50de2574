"""trajforge: diversity-steered synthesis of tool-use trajectories.

The pipeline ingests MCP-style tool definitions into business clusters,
selects a high-coverage subset, runs a blueprint-driven multi-agent
role-play loop over pluggable chat backends, gates the results through
deterministic lints plus a model judge, and steers later rounds with
entropy/complexity gap analysis over a global memory.
"""

__version__ = "0.1.0"
