pub mod check;
pub mod gp;
pub mod grad;
pub mod nsm;
pub mod solvers;
