"""Full-likelihood inference for pairwise exponential-family graphical models."""
