pub mod cli;
pub mod data;
pub mod diffcore;
pub mod eval;
pub mod format;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod trainer;
