"""Zero-shot skeleton action recognition with part-level prompts on a numpy autodiff core."""
