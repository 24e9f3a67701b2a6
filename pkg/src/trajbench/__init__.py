"""trajbench: a workbench for planting, measuring and defending backdoor
attacks on multi-agent trajectory prediction."""

__version__ = "0.1.0"
