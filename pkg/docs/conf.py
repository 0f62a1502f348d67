# Configuration file for the Sphinx documentation builder.
#
# For the full list of options see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys


ROOT_DIR = os.path.abspath(os.path.join(__file__, "..", ".."))
sys.path.insert(0, ROOT_DIR)


# Load incentfl so autodoc can query docstrings
import incentfl  # noqa: E402


# -- Tests -------------------------------------------------------------------

# Ensure that every public name is listed in the reference section of the guide.
with open(os.path.join(ROOT_DIR, "docs", "guide.rst"), "rb") as f:
    guide_text = f.read().decode()
for module in [incentfl.synthdata, incentfl.mechanism, incentfl.utility, incentfl.game]:
    for name in module.__all__:
        assert name in guide_text, f"'{name}' not listed in guide.rst"


# -- Project information -----------------------------------------------------

project = "incentfl"
copyright = "2024, the incentfl developers"
author = "the incentfl developers"
release = incentfl.__version__


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
]

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

master_doc = "index"


# -- Options for HTML output -------------------------------------------------

if not (os.getenv("READTHEDOCS") or os.getenv("CI")):
    html_theme = "sphinx_rtd_theme"
