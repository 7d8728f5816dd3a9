from .imputation import IMPUTATION_STRATEGIES, generated_texts, impute_features
from .metrics import bleu4, embedding_f1, lcs_length, rouge_l, strip_observed_prefix, tokenize
from .report import EvalReport, boost, dump_report, evaluate_records
from .tasks import TaskEvalConfig, TaskResult, hits_at_k, link_prediction_eval, train_node_classifier

__all__ = [
    "IMPUTATION_STRATEGIES",
    "EvalReport",
    "TaskEvalConfig",
    "TaskResult",
    "bleu4",
    "boost",
    "dump_report",
    "embedding_f1",
    "evaluate_records",
    "generated_texts",
    "hits_at_k",
    "impute_features",
    "lcs_length",
    "link_prediction_eval",
    "rouge_l",
    "strip_observed_prefix",
    "tokenize",
    "train_node_classifier",
]
