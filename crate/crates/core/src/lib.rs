pub mod cli;
pub mod error;
pub mod estimate;
pub mod glm;
pub mod io;
pub mod model;
pub mod predict;
pub mod simulate;
