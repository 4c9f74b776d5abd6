"""Progressive conditional GAN pretraining for noisy image classification."""

from ._core import (
    apply_noise,
    chi2_sf_df1,
    cli,
    erf,
    loss_class,
    loss_discern,
    make_glyph_dataset,
    mcnemar,
    motion_kernel,
    predict,
    read_idx,
    selfcheck,
    write_idx,
)

__all__ = [
    "apply_noise",
    "chi2_sf_df1",
    "cli",
    "erf",
    "loss_class",
    "loss_discern",
    "make_glyph_dataset",
    "mcnemar",
    "motion_kernel",
    "predict",
    "read_idx",
    "selfcheck",
    "write_idx",
]
