//! Neural-network controllers for ODE systems: simulation, adjoint
//! gradients, training, analytic optimal-control references and the
//! experiment drivers that compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod experiments;
pub mod grad;
pub mod landscape;
pub mod nn;
pub mod numkit;
pub mod oc_analytic;
pub mod ode;
pub mod optim;
pub mod plot;
