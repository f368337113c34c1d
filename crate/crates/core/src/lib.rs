//! Operator-valued free probability for polynomials in rectangular random matrices.
//!
//! A model is a self-adjoint polynomial in deterministic matrices, circular
//! and semicircular elements and Haar unitaries living on a block space.
//! The pipeline is [`parser`] → [`model`] → [`linearize`] → [`convolve`] →
//! [`spectra`]; [`montecarlo`] samples the matching finite ensembles and
//! [`combinatorics`] provides exact moment counts.

pub mod combinatorics;
pub mod convolve;
pub mod linearize;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod parser;
pub mod spectra;
pub mod transforms;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] parser::ParseError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Solve(#[from] transforms::SolveError),
    #[error(transparent)]
    Spectra(#[from] spectra::SpectraError),
    #[error(transparent)]
    Combinatorics(#[from] combinatorics::CombinatoricsError),
}
