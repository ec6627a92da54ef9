from .fokker_planck import FokkerPlanckError, fokker_planck_evolve
from .metrics import GridMismatch, MetricReport, bootstrap_se, histogram_density, swirl_outlier_stats, tv_distance, valley_mass

__all__ = [
    "FokkerPlanckError", "GridMismatch", "MetricReport", "bootstrap_se", "fokker_planck_evolve",
    "histogram_density", "swirl_outlier_stats", "tv_distance", "valley_mass",
]
