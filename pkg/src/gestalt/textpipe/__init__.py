from .batching import BatchPlan, build_batches
from .bpe import BOS, EOD, EOS, PAD, Vocab, build_vocab
from .segment import Document, split_documents, split_sentences
from .tensors import (
    SentenceStream,
    SentenceTensor,
    document_stream,
    sentence_targets,
    slice_streams,
    target_weights,
    tensor_length,
    tokenize_sentence,
)
