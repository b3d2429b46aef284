"""backdoorlab: train, robustify and break backdoor-poisoned classifiers at desk scale."""

__version__ = "0.1.0"
