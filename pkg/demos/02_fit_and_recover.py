"""Fit the three model kinds and compare how well each recovers the truth.

Plain IRT has one explanation for a zero: low ability.  On data where
context blocks many attempts, it pushes neurodivergent students' ability
estimates down.  The zero-inflated model carries a second, context-driven
explanation and recovers abilities without that group-level bias.
"""

import numpy as np

from zilm import (
    FitConfig,
    ModelKind,
    SimConfig,
    build_design,
    classification_metrics,
    fit,
    generate_dataset,
    recovery_report,
)

cfg = SimConfig(n_students=2000, n_items=300, seed=7)
dataset = generate_dataset(cfg)
design = build_design(dataset)

models = {}
for kind in (ModelKind.IRT, ModelKind.KTM1, ModelKind.IRT_ZILM):
    models[kind] = fit(dataset, kind, FitConfig(), design=design)
    trace = models[kind].trace
    print(f"fit {kind.value:8s} {trace.iterations:4d} iterations "
          f"(converged={trace.converged}, final NLL {trace.nll[-1]:.4f})")

print("\nheld-out predictive metrics:")
print(f"  {'model':10s} {'acc':>6s} {'f1':>6s} {'nll':>6s} {'brier':>6s}")
for kind, model in models.items():
    m = classification_metrics(model, dataset, "test", design=design)
    print(f"  {kind.value:10s} {m.accuracy:6.3f} {m.f1:6.3f} {m.nll:6.3f} {m.brier:6.3f}")

print("\nparameter recovery (correlation with simulator truth):")
print(f"  {'model':10s} {'ability P':>10s} {'ability S':>10s} {'diff P':>8s} {'disc P':>8s}")
for kind, model in models.items():
    r = recovery_report(model, dataset)
    disc = "-" if np.isnan(r.discrimination_pearson) else f"{r.discrimination_pearson:8.3f}"
    print(f"  {kind.value:10s} {r.ability_pearson:10.3f} {r.ability_spearman:10.3f} "
          f"{r.difficulty_pearson:8.3f} {disc:>8s}")

print("\nability bias after affine alignment (mean residual per condition count):")
print("  negative = under-estimated group")
for kind in (ModelKind.IRT, ModelKind.IRT_ZILM):
    r = recovery_report(models[kind], dataset)
    cells = "  ".join(f"{g}: {r.ability_bias[g]:+.3f}" for g in sorted(r.ability_bias)
                      if r.group_sizes[g] > 0)
    print(f"  {kind.value:10s} {cells}")
print("\nplain IRT under-estimates every group that carries conditions; the")
print("zero-inflated fit holds all groups near zero residual.")
