import os

import hypothesis

hypothesis.settings.register_profile("slow_ci", deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "slow_ci"))
