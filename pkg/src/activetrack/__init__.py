"""Instance-aware active target tracking sandbox.

Modules:

* ``features`` / ``theory`` - synthetic feature manifolds, prototypes,
  and the empirical separation harness;
* ``estimator`` - confidence-aware Kalman filter over box states;
* ``world`` / ``episode`` - planar simulator, occlusion, metrics;
* ``grid`` / ``scenarios`` - occupancy maps, expert paths, datasets;
* ``network`` / ``diffusion`` - the denoising trajectory planner;
* ``agent`` / ``runs`` / ``cli`` - the tracking policy and entry points.

Hot geometry kernels run through ``activetrack.kernels`` which picks the
compiled extension when available (``kernels.BACKEND``).
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
