"""Image-feature to caption decoding with a stacked LSTM language model."""

from .vocab import BOS, EOS, UNK, Vocabulary, build_vocabulary, load_embeddings
from .lm import DecoderState, LanguageModel, lstm_step, perplexity, train_lm
from .search import generate_beam, generate_greedy

__all__ = [
    "BOS", "EOS", "UNK", "Vocabulary", "build_vocabulary", "load_embeddings",
    "DecoderState", "LanguageModel", "lstm_step", "perplexity", "train_lm",
    "generate_beam", "generate_greedy",
]
