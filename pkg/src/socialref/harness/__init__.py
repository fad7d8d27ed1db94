from socialref.harness.config import RunConfig
from socialref.harness.metrics import MetricsRecord, confusion_matrix, macro_scores
from socialref.harness.train import evaluate, train

__all__ = ["MetricsRecord", "RunConfig", "confusion_matrix", "evaluate", "macro_scores", "train"]
