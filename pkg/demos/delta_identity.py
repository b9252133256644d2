"""Scaling arithmetic and the reported-estimate consistency check.

Converting a proxy effect into wealth divides by the Engel slope; its standard error
combines both relative errors. Run on published-style numbers, the checker backs out the
Engel slope and its relative error implied by the two reported intervals.
"""
from satwelfare.econ.scaling import check_delta_identity, scale_values

s = scale_values(tau_q=10.0, se_tau_q=2.0, beta=0.02, se_beta=0.004)
print(f"tau_Q=10 (se 2), beta=0.02 (se 0.004) -> tau_W={s.tau_w:.1f}, se={s.se:.2f}")

chk = check_delta_identity(7.9, (2.3, 13.5), 425.0, (61.0, 788.0))
print("footprint 7.9 [2.3, 13.5] m^2 and wealth 425 [61, 788]:")
print(f"  implied beta {chk.implied_beta:.4f} m^2 per USD, implied relative se of beta "
      f"{chk.implied_rel_se_beta:.3f}, consistent={chk.consistent}")
