"""Unit constants and conversions.

Geometry is kept in meters, permeability in millidarcy and transmissibility
in md*m throughout the data model; conversion to SI happens only inside the
flow solver so that log10(k) node features stay in a human-readable range.
"""

MD_TO_M2 = 9.869233e-16   # 1 millidarcy in m^2
PSI_TO_PA = 6894.76       # 1 psi in Pa
CP_TO_PAS = 1.0e-3        # 1 centipoise in Pa*s
ATM_PA = 101325.0         # reference (surface) pressure
DAY_S = 86400.0
YEAR_S = 365.0 * DAY_S    # 365-day year
