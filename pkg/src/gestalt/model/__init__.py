from .baselines import (
    flatten_document,
    forward_decoder_baseline,
    gist_mask,
    respan_document,
    respan_fixed,
    run_windows,
)
from .config import DECODER_VARIANTS, TG_VARIANTS, VARIANTS, ModelConfig
from .layers import Mode
from .params import (
    count_nonembedding_params,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
)
from .tg import (
    MemoryKV,
    SentenceMemory,
    build_memory_kv,
    embed_and_seed,
    extract_sentence_vector,
    forward_sentence_step,
    forward_stream,
    run_streams,
    sentence_step,
    sinusoid,
)
