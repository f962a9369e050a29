"""Adversarial robustness evaluation for NumPy classifiers.

White-box attacks (APGD, fixed-step PGD, targeted FAB), the black-box
Square Attack, the AutoAttack ensemble and the experiment harness all work
on any :class:`robeval.nn.Classifier`.
"""
from .apgd import ApgdConfig, AttackOutcome, apgd_run, checkpoints, eot_loss_grad, pgd_fixed_run
from .ensemble import EnsembleConfig, EvaluationReport, run_autoattack, run_randomized_mode, run_single_attack
from .fab import FabConfig, box_hyperplane_projection, fab_t_multi, fab_t_run
from .harness import RunConfig, compare_pgd_apgd, emit_report, gradient_masking_diagnostic
from .losses import loss_grad_logits, loss_value
from .square import SquareConfig, p_schedule, square_attack
from .threat import ThreatModel, distance, project, random_init, step_direction

__all__ = [
    "ApgdConfig",
    "AttackOutcome",
    "EnsembleConfig",
    "EvaluationReport",
    "FabConfig",
    "RunConfig",
    "SquareConfig",
    "ThreatModel",
    "apgd_run",
    "box_hyperplane_projection",
    "checkpoints",
    "compare_pgd_apgd",
    "distance",
    "emit_report",
    "fab_t_multi",
    "fab_t_run",
    "gradient_masking_diagnostic",
    "loss_grad_logits",
    "loss_value",
    "p_schedule",
    "pgd_fixed_run",
    "eot_loss_grad",
    "project",
    "random_init",
    "run_autoattack",
    "run_randomized_mode",
    "run_single_attack",
    "square_attack",
    "step_direction",
]
