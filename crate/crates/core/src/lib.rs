pub mod eval;
pub mod explain;
pub mod model;
pub mod numerics;
pub mod records;
pub mod train;
