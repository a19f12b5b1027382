use serde::{Deserialize, Serialize};

use crate::design::{Vignette, VignetteId};
use crate::error::RunnerError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub vignette_id: VignetteId,
    pub run_index: u32,
}

/// Vignettes × runs for one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSchedule {
    pub model_name: String,
    pub repetitions: u32,
    pub entries: Vec<ScheduleEntry>,
}

impl RunSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Full cross product in vignette order, then run index.
pub fn plan_runs(vignettes: &[Vignette], repetitions: u32, model_name: &str) -> Result<RunSchedule, RunnerError> {
    if repetitions < 1 {
        return Err(RunnerError::InvalidConfig("repetitions must be at least 1".into()));
    }
    let entries = vignettes
        .iter()
        .flat_map(|v| {
            (0..repetitions).map(move |r| ScheduleEntry {
                vignette_id: v.id.clone(),
                run_index: r,
            })
        })
        .collect();
    Ok(RunSchedule {
        model_name: model_name.to_string(),
        repetitions,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::design::enumerate_vignettes;
    use crate::design::tests::toy_design;

    #[test]
    fn sizes() {
        let d = toy_design(&["a", "b"], &["x", "y", "z"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 3, "m").unwrap();
        assert_eq!(s.len(), 48);
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &s.entries {
            *per.entry(e.vignette_id.as_str()).or_default() += 1;
        }
        assert_eq!(per.len(), 16);
        assert!(per.values().all(|&c| c == 3));
        assert_eq!(s.entries[0].run_index, 0);
        assert_eq!(s.entries[2].run_index, 2);
        assert_eq!(s.entries[3].vignette_id, v[1].id);

        assert_eq!(plan_runs(&v[..1], 1, "m").unwrap().len(), 1);
        assert!(matches!(plan_runs(&v, 0, "m"), Err(RunnerError::InvalidConfig(_))));
    }
}
