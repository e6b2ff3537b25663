use crate::types::{EmbeddingTypeId, EmbeddingVersion};
use crate::{CoreError, Result};

/// The `latest` and `in-use` versions of one embedding type.
///
/// `latest` only moves forward when a fresher time frame is observed.
/// `in_use` only moves forward through [`VersionState::set_in_use`], and never
/// past `latest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionState {
    type_id: EmbeddingTypeId,
    latest: Option<EmbeddingVersion>,
    in_use: Option<EmbeddingVersion>,
}

impl VersionState {
    pub fn new(type_id: EmbeddingTypeId) -> Self {
        Self {
            type_id,
            latest: None,
            in_use: None,
        }
    }

    pub fn type_id(&self) -> &EmbeddingTypeId {
        &self.type_id
    }

    pub fn latest(&self) -> Option<&EmbeddingVersion> {
        self.latest.as_ref()
    }

    pub fn in_use(&self) -> Option<&EmbeddingVersion> {
        self.in_use.as_ref()
    }

    /// Records that `time_frame` exists; returns whether `latest` advanced.
    pub fn observe_latest(&mut self, time_frame: u64) -> bool {
        match &self.latest {
            Some(v) if v.time_frame >= time_frame => false,
            _ => {
                self.latest = Some(self.type_id.at(time_frame));
                true
            }
        }
    }

    /// Moves `in_use` to `version`; returns whether it changed. Setting the
    /// current value again is accepted as a no-op.
    pub fn set_in_use(&mut self, version: &EmbeddingVersion) -> Result<bool> {
        if version.type_id != self.type_id {
            return Err(CoreError::TypeMismatch);
        }
        let requested = version.time_frame;
        if let Some(current) = &self.in_use {
            if requested < current.time_frame {
                return Err(CoreError::RegressingVersion {
                    current: current.time_frame,
                    requested,
                });
            }
            if requested == current.time_frame {
                return Ok(false);
            }
        }
        match &self.latest {
            Some(latest) if requested <= latest.time_frame => {
                self.in_use = Some(version.clone());
                Ok(true)
            }
            _ => Err(CoreError::UnknownVersion(requested)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> VersionState {
        VersionState::new(EmbeddingTypeId::new("mf", "base", 2).unwrap())
    }

    #[test]
    fn fresh_state_is_empty() {
        let s = state();
        assert_eq!((s.latest(), s.in_use()), (None, None));
    }

    #[test]
    fn latest_is_monotone_and_idempotent() {
        let mut s = state();
        assert!(s.observe_latest(1));
        assert!(s.observe_latest(3));
        assert!(!s.observe_latest(3));
        assert!(!s.observe_latest(2));
        assert_eq!(s.latest().unwrap().time_frame, 3);
        assert_eq!(s.in_use(), None);
    }

    #[test]
    fn in_use_transitions() {
        let mut s = state();
        let t = s.type_id().clone();
        s.observe_latest(2);
        assert_eq!(s.set_in_use(&t.at(1)), Ok(true));
        assert_eq!(s.set_in_use(&t.at(2)), Ok(true));
        assert_eq!(s.set_in_use(&t.at(2)), Ok(false));
        assert_eq!(
            s.set_in_use(&t.at(1)),
            Err(CoreError::RegressingVersion {
                current: 2,
                requested: 1
            })
        );
        assert_eq!(s.set_in_use(&t.at(5)), Err(CoreError::UnknownVersion(5)));
        assert_eq!(s.in_use().unwrap().time_frame, 2);
    }

    #[test]
    fn in_use_requires_observed_latest() {
        let mut s = state();
        let t = s.type_id().clone();
        assert_eq!(s.set_in_use(&t.at(1)), Err(CoreError::UnknownVersion(1)));
        let other = EmbeddingTypeId::new("mf", "other", 2).unwrap();
        assert_eq!(s.set_in_use(&other.at(1)), Err(CoreError::TypeMismatch));
    }
}
