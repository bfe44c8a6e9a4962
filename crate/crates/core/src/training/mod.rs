//! Presentation schedules, showings, winner-take-all engagement with
//! concept binding, and the end-to-end learning loop.

mod params;
mod repmap;
mod schedule;
mod targets;
mod trainer;

pub use params::{
    default_delta, minimal_gap_exponent, noisy_weight_target, r1k_gap, satisfies_gap, sigma_noise_free, sigma_noisy,
    LearnMode, LearnParams, ParamError,
};
pub use repmap::{BindError, RepMap};
pub use schedule::{
    encode_showing, generate_schedule, PresentationSchedule, ScheduleIoError, SchedulePolicy, ScheduleViolation, Showing,
};
pub use targets::{check_weight_band, check_weight_targets, WeightMiss, WeightTargetReport};
pub use trainer::{
    engage_controller, network_for, train, InvariantLog, InvariantViolation, Presentation, TrainError, TrainOptions,
    TrainOutcome,
};
