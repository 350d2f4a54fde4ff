"""Rank lines of the 9-bus case by instanton energy.

For each line the closed-form energy gives the exponential rate of the
most likely wind fluctuation pushing the angle gap to a threshold; a
line is rare enough for a budget eps when the energy exceeds
log(1/eps). The weakest line is re-checked with the nonlinear pin.
"""
import numpy as np

from syncopf import parse_case
from syncopf.det_opf import solve_dc_opf
from syncopf.errors import ZeroVarianceError
from syncopf.ld_risk import e_dc_closed_form, ld_condition_check, nonlinear_instanton

THRESHOLD = 0.6
EPS = 1e-3


def main():
    net, _ = parse_case("cases/case9_wind.json")
    dispatch = solve_dc_opf(net).dispatch
    print(f"threshold rho = {THRESHOLD}, budget eps = {EPS} "
          f"(log(1/eps) = {np.log(1 / EPS):.2f})")
    print("\n  line  from  to    energy     rare enough")
    energies = {}
    for k, ln in enumerate(net.lines):
        try:
            res = e_dc_closed_form(net, dispatch, k, THRESHOLD)
        except ZeroVarianceError:
            print(f"  {k:4d}  {ln.from_bus:4d}  {ln.to_bus:2d}    (no wind exposure)")
            continue
        energies[k] = res.energy
        print(f"  {k:4d}  {ln.from_bus:4d}  {ln.to_bus:2d}    {res.energy:9.4g}  "
              f"{ld_condition_check(res.energy, EPS)}")

    weakest = min(energies, key=energies.get)
    nl = nonlinear_instanton(net, dispatch, weakest, THRESHOLD)
    print(f"\nweakest line {weakest}: E_dc = {energies[weakest]:.4f}, "
          f"E_nonlinear = {nl.energy:.4f} (residual {nl.residual:.1e})")
    print("the sine pin moves the target only slightly at this threshold")


if __name__ == "__main__":
    main()
