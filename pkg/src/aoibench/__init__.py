"""Age-of-Information workbench."""
