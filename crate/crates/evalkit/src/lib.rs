//! Evaluation of generated assets: turntable renders, text-image retrieval
//! precision, pairwise judging by a vision-language service, and report
//! tables.

pub mod judge;
pub mod report;
pub mod retrieval;
pub mod stub;
pub mod turntable;

pub use judge::{compose_grid, vision_judge_compare, JudgeClient, Layout, PairwiseJudgment, Verdict};
pub use report::{eval_report, EvalReport};
pub use retrieval::{clip_r_precision, EncoderPair, WordProbeClip, RPrecisionReport};
pub use turntable::{render_turntable, Asset, Turntable, TurntableConfig};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("judge request failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },

    #[error("unparseable judge response ({msg}): {raw}")]
    Parse { msg: String, raw: String },

    #[error("judge winner {winner} contradicts the criteria majority: {raw}")]
    Inconsistent { winner: String, raw: String },

    #[error("missing judge setting {0}")]
    MissingSetting(&'static str),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] coevo_core::Error),

    #[error(transparent)]
    Recon(#[from] coevo_recon::Error),
}
