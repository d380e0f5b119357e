#![allow(dead_code)]

pub mod automaton;
pub mod wire;
