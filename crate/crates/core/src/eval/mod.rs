//! Protected-domain matching and the cancelable-biometrics evaluation
//! protocol.

mod metrics;
mod scenario;

pub use metrics::{
    cosine_score, decidability, dsys, iou, piamr, read_scores_csv, roc_eer, write_roc_csv,
    write_scores_csv, RocPoint, ScoreSet,
};
pub use scenario::{
    prepare_dataset, run_scenario, score_scenario, EvalReport, PreparedDataset, Scenario,
    ScenarioOutcome,
};
