pub mod calibrate;
pub mod cpcore;
pub mod orientations;
pub mod pce;
pub mod pipeline;
pub mod polycrystal;
pub mod rvefem;
pub mod sampling;
pub mod rng;
