#![allow(dead_code)]

pub mod hand;
pub mod props;
