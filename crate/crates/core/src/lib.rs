// validation is written as `!(x >= 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aging;
pub mod dispatch;
pub mod finance;
pub mod powerflow;
pub mod scenario;
pub mod tariff;
pub mod timeseries;
