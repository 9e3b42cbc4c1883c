"""Adapting an English <-> high-resource-language translator to a related low-resource language.

Modules: ``corpus`` (text, vocabularies, files), ``synthlang`` (synthetic
language families), ``noise``, ``model`` (transformer, critics, decoding),
``objectives``, ``trainer``, ``pipeline`` (backtranslation and iterative
training), ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
