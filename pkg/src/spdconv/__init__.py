"""SPD-Conv: space-to-depth downsampling on a small numpy autodiff engine."""
