"""roadex: road extraction from aerial imagery with direction-aware supervision.

Subpackages cover supervision-target generation (`labels`), the segmentation
and refinement networks (`network`), the hybrid training loss (`losses`),
pixel metrics and PR curves (`metrics`), synthetic and on-disk datasets
(`data`, `synth`), and the training/evaluation driver (`trainer`).  The
`roadex` CLI wires them together.
"""

__version__ = "0.1.0"
