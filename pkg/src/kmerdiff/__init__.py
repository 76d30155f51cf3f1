"""Discriminative k-mer discovery toolkit.

Vectorizes DNA sequences (sequential, one-hot, k-mer counts, k-mer graph,
channel image), selects k from abundance spectra, balances classes with
SMOTE, trains tree ensembles, and ranks discriminative k-mer features by
SHAP attribution with incremental-AUC feature selection.
"""

__version__ = "0.1.0"

from kmerdiff.fasta import SequenceRecord, parse_fasta, write_fasta

__all__ = ["SequenceRecord", "parse_fasta", "write_fasta", "__version__"]
