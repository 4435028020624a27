"""Small end-to-end run: generate a cohort, train briefly, evaluate,
plot a Kaplan-Meier split, and rank genes by attribution.

Kept deliberately tiny so it finishes in about a minute; the acceptance
suite (tests/test_acceptance.py) runs the full-scale protocol.
"""

import numpy as np

from pansurv import attribution, survival as sv, synthetic as sg, training as tr
from pansurv.model import prepare_patient

spec = sg.CohortSpec(cancers=("BLCA", "GBMLGG"), baselines=(-2.4, -1.7),
                     cases_per_cancer=40, seed=11)
records, truth = sg.generate_cohort(spec)
splits = sg.kfold_split(records, 4, seed=11)
train_idx, val_idx = splits[0]
train_recs = [records[i] for i in train_idx]
val_recs = [records[i] for i in val_idx]

cfg = tr.TrainConfig(d_model=24, n_experts=3, epochs=6, lr=2e-3,
                     accum_steps=16, seed=11)
print(f"training on {len(train_recs)} patients "
      f"({cfg.epochs} epochs, {cfg.n_experts} experts, d={cfg.d_model})")
model, log = tr.train(train_recs, cfg, val_records=val_recs,
                      log_fn=lambda e: print(
                          f"  epoch {e['epoch']:2d}: loss {e['train_loss']:.4f}"
                          f"  val C (pooled) {e['val_cindex']:.3f}"))

metrics, details = tr.evaluate(val_recs, model)
print("\nper-cancer C-index:", {k: None if v is None else round(v, 3)
                                for k, v in metrics["per_cancer_cindex"].items()})
print("overall mean:", round(metrics["overall_mean_cindex"], 3))
print("median-split logrank p:", {k: None if v is None else round(v, 4)
                                  for k, v in metrics["logrank_p"].items()})

# KM artifacts for the pooled validation split
risks = np.array(details["risks"])
months = np.array(details["months"])
events = ~np.array(details["censored"], dtype=bool)
low, high = sv.median_risk_split(risks)
_, p = sv.logrank_test(months[low], events[low], months[high], events[high])
table = sv.km_table(sv.km_curve(months[low], events[low]),
                    sv.km_curve(months[high], events[high]))
sv.write_km_csv("/tmp/demo_e2e_km.csv", table)
sv.write_km_svg("/tmp/demo_e2e_km.svg", table, p)
print(f"\npooled validation logrank p = {p:.3g} "
      f"(KM written to /tmp/demo_e2e_km.csv/.svg)")

# attribution: do the planted genes surface?
cancer = spec.cancers[0]
cohort = [r for r in val_recs if r.cancer_type == cancer]
reports = [attribution.attribution_report(model, r) for r in cohort]
top = attribution.top_genes(reports, records[0].genomic.schema, k=3)
print(f"\ntop-3 genes for {cancer} (planted: {truth['planted'][cancer]['TSG']}):")
for grp in ("TSG", "ONC"):
    print(f"  {grp}: {[name for name, _ in top[grp]]}")
