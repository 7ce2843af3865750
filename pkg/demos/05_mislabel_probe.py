"""Can interaction data flag a student whose condition went unreported?

Take a dyslexic student, erase the flag from their record (their attempts
were still generated under dyslexia), and compare two fits: the null model
with the recorded flags and an alternative with this one student's flags
replaced.  The likelihood-ratio statistic over the student's own attempts
is positive when the alternative explains them better.
"""

from zilm import FitConfig, ModelKind, NdcProfile, SimConfig, fit, generate_dataset, ndc_hypothesis_test
from zilm.evaluate import swap_student_ndc
from zilm.models import build_design

cfg = SimConfig(n_students=500, n_items=100, seed=202, ndc_prevalence=(0.15, 0.06, 0.11))
dataset = generate_dataset(cfg)
fit_cfg = FitConfig(max_iters=4000, rel_tol=1e-9)

dyslexic = next(s.id for s in dataset.students if s.ndc.dyslexia and s.ndc.count() == 1)
nt = next(s.id for s in dataset.students if s.ndc.count() == 0)

print(f"student {dyslexic} is dyslexic; mislabeling them as NT and probing...")
mislabeled = swap_student_ndc(dataset, dyslexic, NdcProfile())
res = ndc_hypothesis_test(mislabeled, dyslexic, NdcProfile(dyslexia=True), fit_cfg)
print(f"  statistic = {res.statistic:+.2f}  "
      f"(null NLL {res.null_nll:.2f}, alternative NLL {res.alt_nll:.2f})")
print("  positive: the dyslexia explanation wins on their attempts\n")

print(f"student {nt} is NT; probing the same dyslexia alternative...")
design = build_design(dataset)
null_model = fit(dataset, ModelKind.IRT_ZILM, fit_cfg, design=design)
res_nt = ndc_hypothesis_test(dataset, nt, NdcProfile(dyslexia=True), fit_cfg,
                             null_model=null_model, design=design)
print(f"  statistic = {res_nt.statistic:+.2f}")
print("  at or below zero: no evidence for the alternative")
