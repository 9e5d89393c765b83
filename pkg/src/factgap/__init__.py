"""factgap: measure temporal and cross-sectional knowledge gaps of LLMs.

The pipeline runs in resumable stages over entity-year fact tables:
prompt generation -> deterministic model querying -> numeric answer
extraction -> ternary outcome classification -> temporal rate curves and
fixed-effects logistic regression.
"""

__version__ = "0.1.0"
