"""melkit: a multimodal entity-linking engine for short posts.

Links ambiguous name mentions to accounts in a knowledge base by fusing a
learned joint text+image embedding with BM25 and popularity features, and
ships the synthetic benchmark forge used to evaluate the whole stack.
"""

__version__ = "0.1.0"
