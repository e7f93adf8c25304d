//! End-to-end pipeline for learning adjusted DC-OPF parameters (nodal shunt
//! conductances and branch susceptances) so that the adjusted DC-OPF solution
//! approximates the AC-OPF solution.

pub mod acopf;
pub mod cli;
pub mod datagen;
pub mod dcopf;
pub mod diffgrad;
pub mod grid;
pub mod lp;
pub mod nnet;
pub mod testing;
pub mod train;
