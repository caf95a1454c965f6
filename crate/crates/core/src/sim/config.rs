use serde::{Deserialize, Serialize};

use crate::actuator::ServoSpec;
use crate::error::SimError;
use crate::interlock::DecisionPolicy;
use crate::perception::DetectorProfile;

/// Everything that parameterizes one run besides the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub profile: DetectorProfile,
    pub policy: DecisionPolicy,
    pub servo: ServoSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::for_profile(DetectorProfile::reference())
    }
}

impl SimConfig {
    /// Default policy and servo with the stale timeout matched to the
    /// profile's frame period.
    pub fn for_profile(profile: DetectorProfile) -> Self {
        let policy = match profile.frame_period() {
            Ok(period) => DecisionPolicy::for_frame_period(period),
            Err(_) => DecisionPolicy::default(),
        };
        Self { seed: 0, profile, policy, servo: ServoSpec::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.profile.validate()?;
        self.profile.frame_period()?;
        self.policy.validate()?;
        self.servo.validate()?;
        Ok(())
    }
}
