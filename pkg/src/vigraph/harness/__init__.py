"""Training loop, optimizer, ablation presets and command-line entry point."""
