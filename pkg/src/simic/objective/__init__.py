from simic.objective.losses import huber_loss
from simic.objective.metrics import MetricsReport, compare_reports, evaluate, r_squared, rmse
