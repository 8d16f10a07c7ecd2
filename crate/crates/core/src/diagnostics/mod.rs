//! Probe-based Gaussianity testing, empirical second-order structure and
//! information-criterion model comparison.

mod fdr;
mod probes;
mod second_order;
mod selection;
mod shapiro;

pub use fdr::{benjamini_hochberg, BhOutcome};
pub use probes::{
    apply_probes, decide_from_responses, gaussianity_decision, make_probes, random_probes, Decision, Probe,
    ProbeConfig, ProbeReport, DEFAULT_SUPPORT,
};
pub use second_order::{
    empirical_second_order, mean_and_autocov, radial_profile, radial_profile_csv, Assessment, RadialBin,
    SecondOrderConfig, SecondOrderReport, RADIAL_CSV_HEADER,
};
pub use selection::{information_criteria, model_selection, Candidate, Excluded, ModelScore, SelectionReport};
pub use shapiro::shapiro_wilk;
