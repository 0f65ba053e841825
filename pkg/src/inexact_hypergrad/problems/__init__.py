from .hyperclean import HypercleanInstance, gen_hyperclean, hyperclean_problem
from .io import load_instance, save_instance
from .quadratic import (QuadraticInstance, QuadraticOracle, gen_quadratic,
                        quadratic_from_arrays)
from .rng import RngStream, rng_stream

__all__ = [
    "HypercleanInstance", "gen_hyperclean", "hyperclean_problem",
    "load_instance", "save_instance",
    "QuadraticInstance", "QuadraticOracle", "gen_quadratic",
    "quadratic_from_arrays", "RngStream", "rng_stream",
]
