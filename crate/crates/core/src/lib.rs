pub mod geometry;
pub mod lp;
pub mod planar;
pub mod pseudotri;
pub mod qp;
pub mod framework;
pub mod expansion;
pub mod flow;
pub mod io;
pub mod cli;
