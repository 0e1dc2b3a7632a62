from .firing import firing_stats, write_firing_csv
from .fitting import FitResult, digamma, fit_gamma, fit_lognormal, sample_skewness, trigamma
from .shapley import ShapleyReport, coalition_key, shapley_exact

__all__ = [
    "firing_stats", "write_firing_csv",
    "FitResult", "digamma", "fit_gamma", "fit_lognormal", "sample_skewness", "trigamma",
    "ShapleyReport", "coalition_key", "shapley_exact",
]
