# Package marker so the suite under exporter/tests/ imports under its own
# name (exporter.tests) when collected together with the top-level suite.
