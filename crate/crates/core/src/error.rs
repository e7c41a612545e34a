use alloc::boxed::Box;
use alloc::string::String;

use crate::engine::TrajectoryRecord;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quadrature tolerance not met: value {value:e}, error bound {error:e} after {subdivisions} subdivisions")]
    ToleranceNotMet {
        value: f64,
        error: f64,
        subdivisions: usize,
    },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("measure has zero total mass; Λ([0,1]) > 0 is required")]
    ZeroMeasure,
    #[error("total coalescence rate λ_{b} is zero")]
    ZeroTotalRate { b: u64 },
    #[error("γ_{k} is zero")]
    ZeroRate { k: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid geography: {0}")]
    InvalidGeography(String),
    #[error("site count {sites} exceeds the budget of {budget}")]
    SizeOverflow { sites: u128, budget: u64 },
    #[error("the Green function needs a transient walk (d >= 3), got d = {0}")]
    DimensionTooLow(usize),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("ground sets differ: {0} vs {1}")]
    GroundSetMismatch(u32, u32),
    #[error("all rates vanished at t = {time} before the stop rule held")]
    ZeroRateDeadlock { time: f64 },
    #[error("event budget of {budget} exhausted at t = {}", partial.final_time)]
    BudgetExceeded {
        budget: u64,
        partial: Box<TrajectoryRecord>,
    },
    #[error("incompatible coupled variants: {0}")]
    IncompatibleVariants(String),
}
