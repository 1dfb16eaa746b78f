"""Urban-density mapping from 30 m multispectral image time series.

Submodules follow the processing chain: raster storage (raster), annual
compositing and standardization (composite), density labeling (labeler),
training-data construction (sampler), the texture random-forest baseline
(glcm_rf), segmentation networks with their own autograd engine (segnet),
temporal smoothing (timeseries), accuracy and trend evaluation
(evaluation), and a synthetic-city oracle (synthcity).  The cli module
wires everything into subcommands.
"""

from . import composite, evaluation, glcm_rf, labeler, raster, sampler, segnet
from . import synthcity, timeseries

__version__ = "0.1.0"

__all__ = [
    "composite",
    "evaluation",
    "glcm_rf",
    "labeler",
    "raster",
    "sampler",
    "segnet",
    "synthcity",
    "timeseries",
    "__version__",
]
