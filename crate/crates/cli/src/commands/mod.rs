pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod losscurve;
pub mod train;
