"""Desk-scale masked language model lab.

Pipeline: BPE tokenizer -> single-sentence corpus -> mask-pattern
augmentation -> transformer encoder pretraining -> minimal-pair evaluation
-> sweep analysis. See the README for the CLI walkthrough.
"""

__version__ = "0.1.0"
