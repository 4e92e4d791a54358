"""One-step motion prediction by consistency distillation of a DCT-space diffusion model."""

__version__ = "0.1.0"
