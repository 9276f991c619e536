"""Staged energy-preserving embeddings of metric graphs into Lorentzian space."""
