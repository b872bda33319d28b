pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod khasminskii;
pub mod linalg;
pub mod model;
pub mod nonlinear;
pub mod ou;
pub mod rng;
