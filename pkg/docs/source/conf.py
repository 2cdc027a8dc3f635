# Configuration file for the Sphinx documentation builder.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os, sys

sys.path.insert(0, os.path.abspath("../.."))
import tripleprior

# -- Project information -----------------------------------------------------

project = "tripleprior"
copyright = "2026, tripleprior contributors"
author = "tripleprior contributors"

version = tripleprior.__version__
release = version

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.ifconfig",
    "sphinx_autodoc_typehints",
]

nitpick_ignore = [
    ('py:class', 'numpy.ndarray'),
    ('py:class', 'numpy.random._generator.Generator'),
    ('py:class', 'pandas.DataFrame'),
    ('py:class', 'pandas.core.frame.DataFrame'),
    ('py:data', 'typing.Any'),
    ('py:data', 'typing.Callable'),
    ('py:data', 'typing.List'),
    ('py:data', 'typing.Optional'),
    ('py:data', 'typing.Sequence'),
    ('py:data', 'typing.Tuple'),
    ('py:data', 'typing.Union'),
]

set_type_checking_flag = True
always_document_param_types = True
typehints_document_rtype = True

templates_path = ["_templates"]
source_suffix = ".rst"
source_encoding = "utf-8-sig"
master_doc = "index"
exclude_patterns = []

pygments_style = "sphinx"
todo_include_todos = False

# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_rtd_theme"
html_static_path = []  # '_static'
html_show_sphinx = False
html_show_sourcelink = False
htmlhelp_basename = "tripleprior-doc"

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}
latex_documents = [
    (master_doc, "tripleprior.tex", u"tripleprior Documentation", author, "manual"),
]
latex_domain_indices = False

# -- Options for manual page output ---------------------------------------

man_pages = [(master_doc, "tripleprior", u"tripleprior Documentation", [author], 1)]

# -- Options for Epub output ----------------------------------------------

epub_title = project
epub_exclude_files = ["search.html"]
