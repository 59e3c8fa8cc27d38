pub mod adaptation;
pub mod energy;
pub mod sampling;
pub mod stats;
pub mod store;
pub mod target_sim;
