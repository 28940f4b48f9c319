"""Fleet screening: does each battery's month-to-month SoH change look like the reference's?"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .derive import SoHSeries
from .errors import AllZeroDifferences, NoEligibleBatteries
from .stats import wilcoxon_signed_rank


@dataclass
class BatteryComparison:
    serial: str
    status: str  # "same" | "different" | "degenerate-same"
    p_value: float
    statistic: float
    n_pairs: int
    method: str

    @property
    def same(self) -> bool:
        return self.status != "different"


@dataclass
class FleetStudy:
    reference: str
    alpha: float
    comparisons: list
    differences: dict  # serial -> monthly first differences on the shared months
    excluded: list = field(default_factory=list)

    @property
    def candidates(self) -> list[str]:
        return [c.serial for c in self.comparisons]

    @property
    def fraction_same(self) -> float:
        return float(np.mean([c.same for c in self.comparisons]))

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "alpha": self.alpha,
            "fraction_same": self.fraction_same,
            "excluded": list(self.excluded),
            "batteries": [
                {
                    "serial": c.serial,
                    "status": c.status,
                    "p_value": c.p_value,
                    "statistic": c.statistic,
                    "n_pairs": c.n_pairs,
                    "method": c.method,
                }
                for c in self.comparisons
            ],
        }


def aligned_differences(a: SoHSeries, b: SoHSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First differences of both series over consecutive calendar months present in both."""
    months = np.intersect1d(a.months[a.present], b.months[b.present])
    va = a.soh[np.searchsorted(a.months, months)]
    vb = b.soh[np.searchsorted(b.months, months)]
    step = np.diff(months.astype(int)) == 1
    return months[1:][step], np.diff(va)[step], np.diff(vb)[step]


def fleet_wilcoxon(reference: SoHSeries, others: list[SoHSeries], alpha: float = 0.05, min_months: int = 32) -> FleetStudy:
    """Pairwise signed-rank test of each battery's differenced SoH against the reference.

    Batteries with fewer than ``min_months`` months of SoH are left out. A
    battery whose differences coincide with the reference's is reported as
    ``degenerate-same``.
    """
    def eligible(s: SoHSeries) -> bool:
        return int(s.present.sum()) >= min_months

    if not eligible(reference):
        raise NoEligibleBatteries(f"reference {reference.serial} has fewer than {min_months} months")
    keep = [s for s in others if eligible(s)]
    excluded = [s.serial for s in others if not eligible(s)]
    if not keep:
        raise NoEligibleBatteries(f"no battery besides the reference has {min_months} months")

    comparisons, diffs = [], {}
    for other in keep:
        _, d_ref, d_other = aligned_differences(reference, other)
        diffs[other.serial] = d_other
        try:
            res = wilcoxon_signed_rank(d_ref, d_other)
        except AllZeroDifferences:
            comparisons.append(BatteryComparison(other.serial, "degenerate-same", 1.0, 0.0, 0, "degenerate"))
            continue
        status = "different" if res.p_value < alpha else "same"
        comparisons.append(BatteryComparison(other.serial, status, res.p_value, res.statistic, len(d_ref), res.method))
    return FleetStudy(reference.serial, alpha, comparisons, diffs, excluded)
