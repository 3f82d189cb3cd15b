from hypothesis import HealthCheck, settings

# JIT compilation of the kernels can make the first example of a property
# test slow; wall-clock deadlines are not meaningful here.
settings.register_profile(
    "traineff", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("traineff")
