"""Pooled cohort equations on a few profiles, plus their risk categories.

Run from the repository root:  python demos/ascvd_profiles.py
"""
from dataclasses import replace

import numpy as np

from bacsurv import AscvdInputs, ascvd_score, categorize_risk

base = AscvdInputs(age=55, sex="female", race_group="white_or_other", total_cholesterol=213, hdl=50,
                   systolic_bp=120, bp_treated=False, smoker=False, diabetic=False)

for label, p in [
    ("reference", base),
    ("smoker", replace(base, smoker=True)),
    ("treated SBP 150", replace(base, systolic_bp=150, bp_treated=True)),
    ("African American", replace(base, race_group="african_american")),
    ("male", replace(base, sex="male")),
]:
    risk = ascvd_score(p)
    print(f"{label:>17}: {100 * risk:5.2f}%  {categorize_risk(risk).value}")

# risk over age for a high-risk woman: the published female equations are not
# monotone in age when treated SBP is high and HDL is low
p = replace(base, race_group="african_american", systolic_bp=200, bp_treated=True, hdl=20)
for age in np.arange(40, 80, 5):
    print(f"age {age}: {100 * ascvd_score(replace(p, age=float(age))):.2f}%")
