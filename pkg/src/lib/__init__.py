# PMU event identification: shared library components (settings, artifact files)
