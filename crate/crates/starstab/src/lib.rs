pub mod cli;
pub mod eos;
pub mod equilibrium;
pub mod hamiltonian;
pub mod linalg;
pub mod mrcurve;
pub(crate) mod numerics;
pub mod spectral;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/eos.md")]
    mod eos {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/mrcurve.md")]
    mod mrcurve {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/hamiltonian.md")]
    mod hamiltonian {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
}
