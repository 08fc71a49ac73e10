"""synmatch: multi-label code assignment by matching text against code synonyms.

A document encoder (bi-LSTM plus projection) is shared with the encoder of
the codes' synonym phrases; per-synonym attention over head slices of the
document states yields code-wise text representations that a biaffine head
scores against pooled code vectors. Everything runs on an in-package
reverse-mode autodiff engine over numpy arrays.
"""

from .autodiff import Tensor, backward, no_grad
from .encoder import Encoder, EncoderConfig
from .errors import DataError, VerificationError
from .metrics import EvalReport, auc, compute_report, f1, precision_at_k
from .model import Model, ModelConfig
from .rng import Rng
from .synonyms import CodeEntry, SynonymSample, load_dictionary, normalize_entry, sample_synonyms
from .synthgen import SynthConfig, generate, oracle_labels
from .text import Document, Vocabulary, load_embeddings, tokenize, truncate
from .training import TrainConfig, bce_loss, rdrop_loss, train, tune_threshold

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad",
    "Encoder", "EncoderConfig",
    "DataError", "VerificationError",
    "EvalReport", "auc", "compute_report", "f1", "precision_at_k",
    "Model", "ModelConfig",
    "Rng",
    "CodeEntry", "SynonymSample", "load_dictionary", "normalize_entry", "sample_synonyms",
    "SynthConfig", "generate", "oracle_labels",
    "Document", "Vocabulary", "load_embeddings", "tokenize", "truncate",
    "TrainConfig", "bce_loss", "rdrop_loss", "train", "tune_threshold",
    "__version__",
]
