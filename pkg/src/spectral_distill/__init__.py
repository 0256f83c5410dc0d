"""Cross-domain spectral distillation: lab FTIR teacher, spectral adaptation, multimodal student."""
__version__ = "0.1.0"
