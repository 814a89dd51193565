use std::path::Path;

use rayon::prelude::*;

use super::config::EpisodeConfig;
use super::episode::{run_episode, EpisodeReport};
use crate::error::HarnessError;
use crate::ident::PARAM_ROWS;

/// Per-(row, motor) RMS error and mean absolute ground truth over a
/// campaign, rows as in [`PARAM_ROWS`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    pub rms: [[f64; 4]; 13],
    pub mean_abs_truth: [[f64; 4]; 13],
    /// Episodes that produced a fit.
    pub count: usize,
}

impl ParamTable {
    pub fn from_reports(reports: &[EpisodeReport]) -> Self {
        let mut sq = [[0.0; 4]; 13];
        let mut abs = [[0.0; 4]; 13];
        let mut count = 0;
        for r in reports {
            let Some(err) = r.param_errors() else { continue };
            let truth = r.truth.to_array();
            count += 1;
            for row in 0..13 {
                for m in 0..4 {
                    sq[row][m] += err[row * 4 + m].powi(2);
                    abs[row][m] += truth[row * 4 + m].abs();
                }
            }
        }
        let n = count.max(1) as f64;
        Self {
            rms: sq.map(|r| r.map(|v| (v / n).sqrt())),
            mean_abs_truth: abs.map(|r| r.map(|v| v / n)),
            count,
        }
    }

    pub fn row_index(name: &str) -> Option<usize> {
        PARAM_ROWS.iter().position(|(n, _)| *n == name)
    }
}

#[derive(Debug, Clone)]
pub struct CampaignSummary {
    pub config: EpisodeConfig,
    pub base_seed: u64,
    pub reports: Vec<EpisodeReport>,
    pub table: ParamTable,
}

impl CampaignSummary {
    pub fn successes(&self) -> usize {
        self.reports.iter().filter(|r| r.success).count()
    }

    pub fn all_succeeded(&self) -> bool {
        self.successes() == self.reports.len()
    }
}

/// Episodes `base_seed .. base_seed + n`, run in parallel, reported in
/// seed order.
pub fn run_campaign(
    cfg: &EpisodeConfig,
    n: usize,
    base_seed: u64,
    log_dir: Option<&Path>,
) -> Result<CampaignSummary, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Config("at least one episode is required".into()));
    }
    cfg.validate()?;
    let reports = (0..n as u64)
        .into_par_iter()
        .map(|i| run_episode(cfg, base_seed.wrapping_add(i), log_dir))
        .collect::<Result<Vec<_>, _>>()?;
    let table = ParamTable::from_reports(&reports);
    Ok(CampaignSummary {
        config: cfg.clone(),
        base_seed,
        reports,
        table,
    })
}
