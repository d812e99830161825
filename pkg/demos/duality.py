"""Sup form, Tikhonov limit and the constrained-maximization oracle side by side."""

from nrtheat.cli import duality_check

res = duality_check(size=20, cases=5)
for i, row in enumerate(res["cases"]):
    print(f"case {i}: sup {row['sup_form']:.12g}  tikhonov {row['tikhonov_limit']:.12g}  "
          f"oracle {row['oracle']:.12g}")
print(f"max gaps: {res['max_gap_tikhonov']:.1e} (tikhonov), {res['max_gap_oracle']:.1e} (oracle)")
