"""stagekit: a pipeline-based machine-learning framework.

Code is organized along six standardized stages — loaddata, prepdata, embed,
predict, evaluate, interpret — plus off-the-shelf pipelines combining them,
a self-contained numerical kernel (tensorkit, nnkernel), hierarchical YAML
configuration, and reproducibility utilities.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    cli,
    config,
    embed,
    evaluate,
    interpret,
    loaddata,
    nnkernel,
    pipeline,
    predict,
    prepdata,
    tensorkit,
    utils,
)
