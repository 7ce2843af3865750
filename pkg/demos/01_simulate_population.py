"""Generate a synthetic learner population and look at who gets blocked.

Every student carries a latent ability plus independent condition flags
(dyslexia, dyscalculia, sensory processing disorder).  Items carry 3PL
parameters and context: subject, content type, information density,
delivery type, response type.  An attempt can fail for two reasons: the
student's ability was not enough, or the context blocked the attempt
entirely (recorded as "not answered").
"""

from collections import Counter

import numpy as np

from zilm import SimConfig, generate_dataset, save_dataset, validate_dataset

cfg = SimConfig(n_students=2000, n_items=200, seed=42)
dataset = generate_dataset(cfg)
print(f"simulated {len(dataset.attempts)} attempts "
      f"({cfg.n_students} students x {cfg.n_attempts_per_student} items)")
print("invariant violations:", validate_dataset(dataset) or "none")

# outcome mix for the whole population
counts = Counter(a.outcome.value for a in dataset.attempts)
total = len(dataset.attempts)
print("\noutcome mix:")
for outcome, n in counts.most_common():
    print(f"  {outcome:13s} {n / total:6.1%}")

# the same mix, split by how many conditions a student carries
by_count = {s.id: s.ndc.count() for s in dataset.students}
print("\nnot-answered rate by number of conditions:")
for g in range(4):
    mine = [a for a in dataset.attempts if by_count[a.student_id] == g]
    if not mine:
        continue
    rate = np.mean([a.outcome.value == "not_answered" for a in mine])
    n_students = sum(1 for c in by_count.values() if c == g)
    print(f"  {g} condition(s): {rate:6.1%}   ({n_students} students)")

# abilities are independent of condition status by construction
abilities = np.array([s.ability for s in dataset.students])
flags = np.array([s.ndc.count() for s in dataset.students])
print(f"\ncorr(ability, condition count) = {np.corrcoef(abilities, flags)[0, 1]:+.4f}")

# persist in the documented directory layout
save_dataset(dataset, "out/demo_population", seed=cfg.seed,
             config=cfg.to_dict(), force=True)
print("\nwrote out/demo_population/{students,items,attempts}.csv + manifest.json")
