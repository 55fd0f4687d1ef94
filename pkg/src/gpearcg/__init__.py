"""Ground states of the 2-D rotating Gross-Pitaevskii equation.

Pseudo-spectral discretization on a periodic box, an energy-adaptive
Riemannian conjugate-gradient solver on the L2 unit sphere, and an optional
learned mid-run correction gated by a normalization-error indicator.
"""

from .field import (
    Grid,
    GridMismatchError,
    State,
    TangentField,
    inner_l2,
    l2_norm,
    load_state,
    make_grid,
    project_tangent,
    random_state,
    save_state,
    to_real,
    to_spectral,
)
from .gpe import (
    CoercivityError,
    GpeParams,
    HamiltonianContext,
    InverseSolveError,
    apply_hamiltonian,
    bilinear_a,
    energy,
    energy_terms,
    rayleigh_quotient,
    solve_inverse,
)
from .manifold import (
    DegenerateDirectionError,
    MetricContext,
    ea_gradient,
    energy_norm,
    metric_context,
    retract,
    transport,
)
from .solver import (
    CallbackAction,
    EarcgConfig,
    IterationInfo,
    LineSearchStagnation,
    NonDescentError,
    RunTrace,
    SolverStagnation,
    TraceRow,
    earcg_solve,
    line_search,
)
from .accel import (
    AccelConfig,
    AccelEvent,
    accelerated_solve,
    norm_error_indicator,
    random_apply_solve,
    should_invoke,
)
from .dataset import (
    DatasetFormatError,
    SamplePoint,
    generate_batch,
    generate_run,
    read_dataset,
    sample_params,
    sample_params_custom,
    tolerance_schedule,
    write_dataset,
)
from .unet import (
    ArchiveError,
    NetworkSpec,
    UnetModel,
    WeightArchive,
    forward,
    load_archive,
    postprocess,
    prepare_input,
    random_archive,
    read_spec_sidecar,
    save_archive,
    write_spec_sidecar,
    zero_archive,
)
from .bench import (
    BenchCase,
    BenchRecord,
    bench,
    density_l1_error,
    impr_rho,
    load_records,
    summarize,
    write_summary_csv,
)

__version__ = "0.1.0"
