pub mod constants;
pub mod eval;
pub mod game;
pub mod linalg;
pub mod par;
pub mod recovery;
pub mod relaxation;
pub mod report;
pub mod rounding;
pub mod sample;
pub mod solver;
