"""Minimum-norm adversarial attack toolkit for small dense classifiers."""

from .baselines import DdnConfig, PgdConfig, PgdResult, ddn_attack, pgd_attack
from .datagen import demo2d_model, generate_dataset, linear_model, moons_model, rng_for
from .fmn import (
    AttackConfig,
    AttackResult,
    AttackState,
    AttackTrace,
    TraceRecord,
    binary_search_init,
    cosine_anneal,
    delta_step,
    epsilon_step,
    fmn_attack,
)
from .harness import (
    EvalReport,
    SweepResults,
    SweepSpec,
    build_report,
    convergence_queries,
    export_traces,
    import_traces,
    median_perturbation,
    qd_curve,
    robust_accuracy,
    run_sweep,
    success_rate_at_eps,
    timing_report,
)
from .model import (
    AttackGoal,
    DenseNetwork,
    Layer,
    Sample,
    attack_loss,
    forward,
    load_dataset,
    load_model,
    loss_and_grad,
    predict,
    save_dataset,
    save_model,
)
from .projections import NormKind, clip_box, dual_norm_of, lp_norm, project

__version__ = "0.1.0"
