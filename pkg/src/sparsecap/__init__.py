"""sparsecap: geometry and SVBRDF reconstruction from sparse collocated-flash captures.

Submodules are imported explicitly (``from sparsecap import autodiff, brdf, ...``);
the top-level package stays import-light so the CLI can pin thread counts
before numpy loads.
"""

__version__ = "0.1.0"
