#![allow(dead_code)]

pub mod foam_gen;
pub mod rpc_gen;
