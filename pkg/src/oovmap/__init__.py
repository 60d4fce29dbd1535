"""Map initial word embeddings into a task-trained embedding space.

Words never seen in a supervised training set keep their initial
(pre-trained) vectors, which live in a different space from the vectors
the downstream model was trained with. A small hardtanh network, trained on
words that have both vectors, maps the former into the latter.
"""

__version__ = "0.1.0"
