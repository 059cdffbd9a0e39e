#![allow(dead_code)]

pub mod gradient;
pub mod metrics;
pub mod plane;
