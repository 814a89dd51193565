//! Seeded Monte-Carlo throw campaigns.

pub mod campaign;
pub mod config;
pub mod episode;
pub mod log;
pub mod release;
pub mod report;

pub use campaign::{run_campaign, CampaignSummary, ParamTable};
pub use config::{EpisodeConfig, ReleaseConfig, SuccessConfig};
pub use episode::{run_episode, EpisodePhase, EpisodeReport};
pub use release::ReleaseDetector;
pub use report::{render_episodes_csv, render_summary_csv, render_text, write_reports};
