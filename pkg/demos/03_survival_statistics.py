"""Survival machinery on a toy cohort: hazards, the discrete-time NLL,
concordance, Kaplan-Meier curves, and the two-group logrank test."""

import math

import numpy as np

from pansurv import survival as sv

# hazards -> cumulative survival -> risk
curve = sv.HazardCurve.from_hazards([0.1, 0.2, 0.4, 0.6])
print("hazards:        ", curve.hazards)
print("cum. survival:  ", np.round(curve.survival, 4))
print("risk score:     ", round(sv.risk_score(curve), 4))

# the loss pays for the event bin only when the event was observed
print("censored loss at bin 1:  ",
      round(sv.nll_survival_loss(curve, censored=True, time_bin=1), 4))
print("uncensored loss at bin 1:",
      round(sv.nll_survival_loss(curve, censored=False, time_bin=1), 4))
hand = -math.log(0.9) - math.log(0.2)
check = sv.nll_survival_loss(sv.HazardCurve.from_hazards([0.1, 0.2]), False, 1)
print(f"hand-computed example: {hand:.6f} vs {check:.6f}")

# concordance on a small synthetic cohort with a known ordering
rng = np.random.default_rng(5)
n = 120
risk = rng.standard_normal(n)
latent = rng.exponential(np.exp(-risk) * 20)
censor = rng.random(n) < 0.25
times = np.where(censor, latent * rng.random(n), latent)
print(f"\nC-index of the true risk: "
      f"{sv.concordance_index(risk, times, censor):.3f} (1.0 = perfect)")

# Kaplan-Meier + logrank on a median risk split
low, high = sv.median_risk_split(risk)
events = ~censor
km_low = sv.km_curve(times[low], events[low])
km_high = sv.km_curve(times[high], events[high])
chi2, p = sv.logrank_test(times[low], events[low], times[high], events[high])
print(f"logrank chi2 = {chi2:.2f}, p = {p:.2e}")
table = sv.km_table(km_low, km_high)
print("KM table (first rows):")
for t, lo, hi in table[:5]:
    print(f"  t={t:7.2f}  S_low={lo:.3f}  S_high={hi:.3f}")
sv.write_km_csv("/tmp/demo_km.csv", table)
sv.write_km_svg("/tmp/demo_km.svg", table, p)
print("wrote /tmp/demo_km.csv and /tmp/demo_km.svg")
