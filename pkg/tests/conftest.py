from hypothesis import settings

# Property tests draw from a fixed seed so every run of the suite is identical.
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")
