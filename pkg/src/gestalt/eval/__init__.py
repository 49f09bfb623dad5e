from .perplexity import eval_perplexity, lexical_nll
