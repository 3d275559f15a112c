"""Space-to-space GPS link budgets and the thermal noise they imply.

Two reception regimes bracket the problem: a LEO receiver listening to the
transmit mainlobe across ~20,000 km, and a GEO receiver surviving on sidelobe
spillover from satellites on the far side of the constellation (~80,000 km).
The budget sums dB terms to a carrier-to-noise density; the tracking-loop
model turns C/N0 into one-sigma code and carrier noise, the quantities the
navigation filter actually consumes.
"""

import numpy as np

from cdgps.errors import (LinkBudget, LossOfLockError, TRACKING_THRESHOLD,
                          carrier_to_noise, thermal_noise_sigmas)

budgets = {"LEO mainlobe": LinkBudget.leo_mainlobe(),
           "GEO sidelobe": LinkBudget.geo_sidelobe()}

print("=" * 64)
print("Link budget chain (all values dB / dBW / dB-Hz)")
print("=" * 64)
rows = [
    ("transmit power", lambda b: b.gps_transmit_power),
    ("transmit circuit loss", lambda b: b.gps_transmit_loss),
    ("transmit antenna gain", lambda b: b.gps_antenna_gain),
    ("EIRP", lambda b: b.gps_eirp),
    ("free-space path loss", lambda b: b.path_loss),
    ("atmospheric loss", lambda b: b.atmospheric_loss),
    ("receive antenna gain", lambda b: b.rx_antenna_gain),
    ("polarization + circuit", lambda b: b.rx_polarization_loss
                                        + b.rx_circuit_loss),
    ("received carrier power", lambda b: b.carrier_power),
    ("C/N0", carrier_to_noise),
]
header = f"{'term':30s}" + "".join(f"{name:>16s}" for name in budgets)
print(header)
for label, fn in rows:
    cells = "".join(f"{fn(b):16.3f}" for b in budgets.values())
    print(f"{label:30s}{cells}")

print()
print("Tracking-loop noise at the two operating points:")
for name, budget in budgets.items():
    cn0 = carrier_to_noise(budget)
    sigma_code, sigma_phase = thermal_noise_sigmas(cn0)
    print(f"  {name:14s} C/N0 {cn0:6.2f} dB-Hz -> "
          f"code {sigma_code:7.3f} m, carrier {1e3 * sigma_phase:7.3f} mm")

print()
print(f"Sweeping C/N0 down to the tracking threshold ({TRACKING_THRESHOLD} "
      "dB-Hz); below it the loops lose lock:")
for cn0 in np.arange(45.0, 13.9, -5.0):
    try:
        sigma_code, sigma_phase = thermal_noise_sigmas(float(cn0))
        print(f"  {cn0:5.1f} dB-Hz   code {sigma_code:8.3f} m   "
              f"carrier {1e3 * sigma_phase:8.3f} mm")
    except LossOfLockError as exc:
        print(f"  {cn0:5.1f} dB-Hz   loss of lock ({exc})")

print()
print("Halving the slant range recovers ~6 dB of carrier power:")
for slant_km in (80_000.0, 40_000.0, 20_000.0):
    budget = LinkBudget.geo_sidelobe()
    budget.slant_range = slant_km
    print(f"  {slant_km:9,.0f} km -> C/N0 {carrier_to_noise(budget):6.2f} dB-Hz")
