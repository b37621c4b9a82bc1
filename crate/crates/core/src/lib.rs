//! Path/link message-passing network model with a packet-level simulator for
//! ground truth and a candidate-set routing optimizer on top.
pub mod autodiff;
pub mod dataset;
pub mod fsio;
pub mod graph;
pub mod model;
pub mod netsim;
pub mod optimize;
pub mod seed;
pub mod traffic;
pub mod train;
