"""Independent evaluation of the vp-linear closed form for T=10.

Writes the (alpha_t, sigma_t) table as a Rust array literal.
"""
import mpmath as mp

mp.mp.dps = 40
BETA_MIN, BETA_MAX, T = mp.mpf("0.1"), mp.mpf("20"), 10

rows = []
for t in range(T + 1):
    tau = mp.mpf(t) / T
    log_ab = -(BETA_MIN * tau + (BETA_MAX - BETA_MIN) * tau**2 / 2)
    ab = mp.e**log_ab
    rows.append((mp.sqrt(ab), mp.sqrt(1 - ab)))

print("[")
for a, s in rows:
    print(f"    ({mp.nstr(a, 20)}, {mp.nstr(s, 20)}),")
print("]")
