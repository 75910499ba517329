pub mod clustering;
pub mod discretization;
pub mod gca;
pub mod hca;
pub mod hstruct;
pub mod kernel;
pub mod lowrank;
pub mod mesh;
pub mod quadrature;
pub mod solver;
