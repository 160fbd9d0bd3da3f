import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from slowfast import app, config, errors, experiments, fitting, integrator, measure, model, observability, poisson, report_store, rng  # noqa: E402,F401
from slowfast.services import oracles  # noqa: E402,F401
import main  # noqa: E402,F401
