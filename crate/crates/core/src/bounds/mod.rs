//! Monte Carlo evaluation of the random-coding achievability bound and the
//! tilted-information converse bound, and rate curves built from them.

mod achievability;
mod converse;
mod curve;
mod tilted;

pub use achievability::{
    achievability_bound, ball_probability, AchievabilityEstimate, AchievabilitySimulator, BallEstimate,
    McConfig, Regime, RegionFailure,
};
pub use converse::{converse_bound, ConversePoint, GammaPolicy, TailSample};
pub use curve::{
    bound_curve, bound_curve_csv, bound_point, scale_field, split_log_m, BoundConfig, BoundPoint,
    BOUND_CSV_HEADER,
};
pub use tilted::{tilted_density_sample, ActiveMode, TiltedDensityModel};
