//! Numerical laboratory for analytic discs attached to real submanifolds of C^n.
//!
//! The crate is organized around the constructive machinery of CR extension
//! theory: spectral primitives on the unit circle (`circle_ops`), graphed
//! submanifold geometry (`cr_geometry`), fixed-point solvers for disc
//! attachment equations (`bishop_solver`), parametrized families of analytic
//! discs and the cones of directions they sweep out (`disc_families`),
//! characteristic foliations with their condition checkers
//! (`foliation_analysis`), continuity-principle coverage and Gauss-kernel
//! approximation experiments (`extension_lab`), and a complete numerical
//! verification of an explicit nonremovable torus configuration
//! (`torus_example`).

pub mod bishop_solver;
pub mod circle_ops;
pub mod cr_geometry;
pub mod disc_families;
pub mod extension_lab;
pub mod foliation_analysis;
pub mod torus_example;
