//! Declarative campaign configuration (TOML).
//!
//! ```toml
//! mutants = 10000          # defaults for every campaign
//! rng_seed = 1
//! parallel = true
//!
//! [[campaign]]
//! trace = "cpu_bound.iris"
//! snapshot = "boot.irisnap"   # optional starting state
//! first_of = "RDTSC"          # or: index = 42; neither = every reason present
//! area = "VMCS"               # omitted = both areas
//! ```

use std::path::PathBuf;

use serde::Deserialize;

use super::campaign::{first_of_reason, TestCase, DEFAULT_MUTANTS};
use super::mutate::SeedArea;
use super::FuzzError;
use crate::recorder::TraceFile;
use crate::vmx::ExitReason;

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzConfig {
    #[serde(default = "default_mutants")]
    pub mutants: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub campaign: Vec<CampaignSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub trace: PathBuf,
    pub snapshot: Option<PathBuf>,
    pub index: Option<usize>,
    pub first_of: Option<String>,
    pub area: Option<SeedArea>,
    pub mutants: Option<usize>,
    pub rng_seed: Option<u64>,
}

fn default_mutants() -> usize {
    DEFAULT_MUTANTS
}

impl FuzzConfig {
    pub fn from_toml(text: &str) -> Result<Self, FuzzError> {
        let cfg: FuzzConfig = toml::from_str(text).map_err(|e| FuzzError::Config(e.to_string()))?;
        for c in &cfg.campaign {
            if c.index.is_some() && c.first_of.is_some() {
                return Err(FuzzError::Config(format!(
                    "campaign on {}: give either index or first_of, not both",
                    c.trace.display()
                )));
            }
            if let Some(name) = &c.first_of {
                ExitReason::from_name(name)
                    .ok_or_else(|| FuzzError::Config(format!("unknown exit reason {name:?}")))?;
            }
        }
        Ok(cfg)
    }
}

impl CampaignSpec {
    /// Test cases this entry expands to against `trace`.
    pub fn test_cases(&self, cfg: &FuzzConfig, trace: &TraceFile, trace_id: &str) -> Result<Vec<TestCase>, FuzzError> {
        let indices: Vec<usize> = match (self.index, &self.first_of) {
            (Some(i), _) => vec![i],
            (None, Some(name)) => {
                let reason = ExitReason::from_name(name)
                    .ok_or_else(|| FuzzError::Config(format!("unknown exit reason {name:?}")))?;
                vec![first_of_reason(trace, reason).ok_or_else(|| FuzzError::NoSeedForReason(reason.name()))?]
            }
            (None, None) => trace
                .reason_histogram()
                .into_iter()
                .filter_map(|(r, _)| first_of_reason(trace, r))
                .collect(),
        };
        let areas: Vec<SeedArea> = match self.area {
            Some(a) => vec![a],
            None => SeedArea::ALL.to_vec(),
        };
        let mut out = Vec::new();
        for &seed_index in &indices {
            for &area in &areas {
                out.push(TestCase {
                    trace_id: trace_id.to_string(),
                    seed_index,
                    area,
                    mutants: self.mutants.unwrap_or(cfg.mutants),
                    rng_seed: self.rng_seed.unwrap_or(cfg.rng_seed),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::Workload;
    use crate::recorder::record_workload;

    #[test]
    fn parses_and_expands() {
        let cfg = FuzzConfig::from_toml(
            r#"
            rng_seed = 3
            [[campaign]]
            trace = "a.iris"
            first_of = "cr_access"
            area = "VMCS"
            [[campaign]]
            trace = "a.iris"
            mutants = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.mutants, 10_000);
        let run = record_workload(Workload::OsBoot, 200, 1);
        let one = cfg.campaign[0].test_cases(&cfg, &run.trace, "a").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(run.trace.records[one[0].seed_index].seed.reason(), ExitReason::CrAccess);
        assert_eq!(one[0].rng_seed, 3);
        let all = cfg.campaign[1].test_cases(&cfg, &run.trace, "a").unwrap();
        assert_eq!(all.len(), 2 * run.trace.reason_histogram().len());
        assert!(all.iter().all(|t| t.mutants == 10));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(FuzzConfig::from_toml("[[campaign]]\ntrace = 1").is_err());
        assert!(FuzzConfig::from_toml("[[campaign]]\ntrace = \"a\"\nfirst_of = \"NOPE\"").is_err());
        assert!(FuzzConfig::from_toml("[[campaign]]\ntrace = \"a\"\nindex = 1\nfirst_of = \"HLT\"").is_err());
        assert!(FuzzConfig::from_toml("[[campaign]]\ntrace = \"a\"\narea = \"DISK\"").is_err());
    }
}
