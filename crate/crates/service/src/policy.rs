use chrono::Duration;
use serde::Serialize;

/// What the annotator cap is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CapBasis {
    /// Fraction of the number of tuples.
    Tuples,
    /// Fraction of the planned judgments, tuples x target.
    Workload,
}

impl std::str::FromStr for CapBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tuples" => Ok(CapBasis::Tuples),
            "workload" => Ok(CapBasis::Workload),
            other => Err(format!("unknown cap basis `{other}` (expected tuples or workload)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssignmentPolicy {
    pub target_annotations_per_tuple: usize,
    pub floor_annotations_per_tuple: usize,
    pub annotator_cap_fraction: f64,
    #[serde(serialize_with = "seconds")]
    pub reservation_ttl: Duration,
    pub cap_basis: CapBasis,
}

fn seconds<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64(d.num_seconds())
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        AssignmentPolicy {
            target_annotations_per_tuple: 3,
            floor_annotations_per_tuple: 2,
            annotator_cap_fraction: 0.08,
            reservation_ttl: Duration::minutes(15),
            cap_basis: CapBasis::Workload,
        }
    }
}

impl AssignmentPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_annotations_per_tuple == 0 {
            return Err("target must be at least 1".into());
        }
        if self.floor_annotations_per_tuple > self.target_annotations_per_tuple {
            return Err("floor must not exceed target".into());
        }
        if !(self.annotator_cap_fraction > 0.0 && self.annotator_cap_fraction <= 1.0) {
            return Err(format!("cap fraction {} outside (0, 1]", self.annotator_cap_fraction));
        }
        if self.reservation_ttl <= Duration::zero() {
            return Err("reservation ttl must be positive".into());
        }
        Ok(())
    }

    /// Most tuples one annotator may complete.
    pub fn annotator_cap(&self, n_tuples: usize) -> usize {
        let basis = match self.cap_basis {
            CapBasis::Tuples => n_tuples,
            CapBasis::Workload => n_tuples * self.target_annotations_per_tuple,
        };
        // 0.08 * 2000 must come out as 160, not 161
        let raw = self.annotator_cap_fraction * basis as f64;
        let rounded = raw.round();
        if (raw - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            raw.ceil() as usize
        }
    }
}
