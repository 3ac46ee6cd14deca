"""Global rigid 3D multimodal volume alignment via FFT cross-similarity of
normalized gradient fields."""

from .volume import (
    Mask,
    RigidTransform,
    Volume,
    apply_rigid,
    downsample,
    full_mask,
    gaussian_smooth,
    load_volume,
    save_volume,
    trilinear_sample,
)
from .ngf import NgfConfig, VectorField, angf, gradient, normalize, sngf_point, usngf_point
from .simmap import (
    SimilarityMap,
    argmax_displacement,
    csngf_map_direct,
    csngf_map_fft,
    usngf_map_fft,
)
from .search import (
    PyramidConfig,
    SearchConfig,
    SearchResult,
    global_search,
    scaled_schedule,
)
from .harness import (
    PhantomSpec,
    TrialSpec,
    bench_oracle,
    corner_error,
    gen_phantom_pair,
    make_trial,
    run_trials,
    success_rate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
