// `!(x > t)` is used on purpose so that NaN fails a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod analysis;
pub mod clock;
pub mod config;
pub mod control;
pub mod domain;
pub mod engine;
pub mod events;
pub mod evaluation;
pub mod execution;
pub mod latency_arb;
pub mod marketdata;
pub mod par;
pub mod persistence;
pub mod risk;
pub mod swarm;
pub mod synthetic;
